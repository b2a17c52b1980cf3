"""Datasets: the standard CIFAR-10 binary format plus seeded synthetic
generators sized for desk-scale experiments.

Everything here is a pure function of its arguments and seed; loaders reject
truncated files rather than returning partial datasets.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465])
CIFAR_STD = np.array([0.247, 0.243, 0.261])
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]
_CIFAR_RECORD = 1 + 3 * 32 * 32
_CIFAR_RECORDS_PER_FILE = 10000


@dataclass
class Dataset:
    inputs: np.ndarray          # float images [n,c,H,W] or int token ids [n,T]
    labels: np.ndarray          # [n] class ids, or [n,T] next-token ids
    split: str = "train"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError(
                f"inputs ({len(self.inputs)}) and labels ({len(self.labels)}) differ")

    def __len__(self):
        return len(self.inputs)


def normalize_cifar(pixels: np.ndarray) -> np.ndarray:
    """Scale [0,255] bytes to [0,1] and standardize per channel."""
    x = pixels.astype(np.float64) / 255.0
    return (x - CIFAR_MEAN[:, None, None]) / CIFAR_STD[:, None, None]


def denormalize_cifar(x: np.ndarray) -> np.ndarray:
    return (x * CIFAR_STD[:, None, None] + CIFAR_MEAN[:, None, None]) * 255.0


def _read_cifar_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    expected = _CIFAR_RECORD * _CIFAR_RECORDS_PER_FILE
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing CIFAR-10 batch file {path} "
                                f"(expected {expected} bytes)")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size != expected:
        raise ValueError(f"truncated CIFAR-10 file {path}: {raw.size} bytes, "
                         f"expected {expected}")
    rec = raw.reshape(_CIFAR_RECORDS_PER_FILE, _CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar10(directory: str) -> tuple[Dataset, Dataset]:
    """Load the six standard binary batches; 50k train / 10k test, normalized."""
    def load(files, split):
        images, labels = [], []
        for fname in files:
            imgs, labs = _read_cifar_file(os.path.join(directory, fname))
            images.append(imgs)
            labels.append(labs)
        pixels = np.concatenate(images)
        x = np.stack([normalize_cifar(p) for p in pixels])
        return Dataset(x, np.concatenate(labels), split,
                       {"num_classes": 10, "input_hw": (32, 32)})

    return load(CIFAR_TRAIN_FILES, "train"), load(CIFAR_TEST_FILES, "test")


def pad_crop(img: np.ndarray, oy: int, ox: int, pad: int = 4) -> np.ndarray:
    """Zero-pad by ``pad`` and crop the original size at offset (oy, ox)."""
    c, H, W = img.shape
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)))
    return padded[:, oy:oy + H, ox:ox + W]


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1].copy()


def augment(batch: np.ndarray, seed: int, pad: int = 4) -> np.ndarray:
    """Pad-4 -> random crop -> coin-flip horizontal mirror, per image."""
    rng = np.random.default_rng(seed)
    out = np.empty_like(batch)
    for i, img in enumerate(batch):
        oy, ox = rng.integers(0, 2 * pad + 1, size=2)
        view = pad_crop(img, int(oy), int(ox), pad)
        if rng.random() < 0.5:
            view = hflip(view)
        out[i] = view
    return out


def synth_classification(n: int, classes: int = 10, dim: int = 32, seed: int = 0,
                         margin: float = 6.0, image_shape: tuple | None = None,
                         split: str = "train") -> Dataset:
    """Gaussian class blobs with unit noise and mean separation ``margin``.

    The class means depend only on ``seed``, so train and test splits of the
    same seed share one distribution; the noise stream differs per split.
    With ``image_shape=(c, H, W)`` the samples come back as image tensors
    (dim is then c*H*W); a linear probe separates the classes whenever the
    margin comfortably exceeds the noise scale.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if image_shape is not None:
        c, H, W = image_shape
        dim = c * H * W
    mean_rng = np.random.default_rng(seed)
    means = mean_rng.normal(size=(classes, dim))
    means *= margin / np.linalg.norm(means, axis=1, keepdims=True)
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    x = means[labels] + rng.normal(size=(n, dim))
    if image_shape is not None:
        x = x.reshape((n,) + tuple(image_shape))
    meta = {"num_classes": classes, "margin": margin}
    if image_shape is not None:
        meta["input_hw"] = tuple(image_shape[1:])
    return Dataset(x, labels, split, meta)


MARKER_A, MARKER_B = 2, 3   # reserved marker tokens for the majority rule


def synth_sequences(n: int, vocab: int = 16, length: int = 16, seed: int = 0,
                    kind: str = "majority", split: str = "train") -> Dataset:
    """Token-sequence corpora with analytically known structure.

    ``majority``: filler tokens plus planted markers; the label is which
    marker occurs more often (counts always differ, so the rule is exact).
    ``markov``: a two-state chain emitting tokens from two disjoint halves of
    the vocabulary; targets are the next token, and the optimal perplexity
    exp(entropy rate) is recorded in the metadata.
    """
    if vocab < 4:
        raise ValueError(f"vocab must be >= 4, got {vocab}")
    rng = np.random.default_rng(seed)
    if kind == "majority":
        seqs = rng.integers(4, vocab, size=(n, length))
        labels = rng.integers(0, 2, size=n)
        n_marks = max(3, length // 3) | 1          # odd count: no ties
        for i in range(n):
            pos = rng.choice(length, size=n_marks, replace=False)
            major = MARKER_A if labels[i] else MARKER_B
            minor = MARKER_B if labels[i] else MARKER_A
            k = n_marks // 2 + 1
            seqs[i, pos[:k]] = major
            seqs[i, pos[k:]] = minor
        return Dataset(seqs.astype(np.int64), labels.astype(np.int64), split,
                       {"num_classes": 2, "vocab_size": vocab,
                        "markers": (MARKER_A, MARKER_B)})
    if kind == "markov":
        stay = 0.9
        half = vocab // 2
        states = np.empty((n, length + 1), dtype=np.int64)
        states[:, 0] = rng.integers(0, 2, size=n)
        flips = rng.random(size=(n, length)) > stay
        for t in range(length):
            states[:, t + 1] = np.where(flips[:, t], 1 - states[:, t], states[:, t])
        # emit uniformly from the state's half of the vocabulary
        offsets = rng.integers(0, half, size=(n, length + 1))
        tokens = states * half + offsets
        h_trans = -(stay * np.log(stay) + (1 - stay) * np.log(1 - stay))
        entropy_rate = h_trans + np.log(half)
        return Dataset(tokens[:, :-1], tokens[:, 1:], split,
                       {"vocab_size": vocab, "stay_prob": stay,
                        "optimal_perplexity": float(np.exp(entropy_rate))})
    raise ValueError(f"unknown sequence corpus kind {kind!r}")


def save_token_corpus(ds: Dataset, path: str) -> None:
    """Line-oriented token format: space-separated ids, tab, label ids."""
    with open(path, "w") as fh:
        for seq, lab in zip(ds.inputs, ds.labels):
            lab_txt = (" ".join(str(v) for v in np.atleast_1d(lab)))
            fh.write(" ".join(str(v) for v in seq) + "\t" + lab_txt + "\n")


def load_token_corpus(path: str, split: str = "train") -> Dataset:
    seqs, labels = [], []
    with open(path) as fh:
        for line in fh:
            left, right = line.rstrip("\n").split("\t")
            seqs.append([int(v) for v in left.split()])
            lab = [int(v) for v in right.split()]
            labels.append(lab[0] if len(lab) == 1 else lab)
    return Dataset(np.asarray(seqs, dtype=np.int64),
                   np.asarray(labels, dtype=np.int64), split, {})
