"""Network building blocks wired to threshold gates.

Granularity map: a ``ConvUnit`` carries one gate component per filter, a
``ResidualBlock`` one scalar gate for its whole branch, an ``LstmCell`` one
gate per (recurrence-gate, hidden-index) node.  Every block registers its own
parameters on the per-step tape inside ``forward``; names are derived from
the block's ``name`` so the gradient map and the optimizer agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gate import GateParam, apply_gate, apply_mask
from .tensor import (ShapeError, Tensor, Tape, add, concat_cols, custom_grad,
                     matmul, mul, relu, reshape, sigmoid, tanh, transpose)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` [b,n,H,W] with filters ``w`` [m,n,k,k]."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected rank-4 operands, got {x.shape}, {w.shape}")
    b, n, H, W = x.shape
    m, n_w, k, k2 = w.shape
    if n_w != n or k != k2:
        raise ShapeError(f"conv2d: filter shape {w.shape} incompatible with input {x.shape}")
    if (H + 2 * padding - k) % stride or (W + 2 * padding - k) % stride:
        raise ShapeError(
            f"conv2d: output size ({H}+2*{padding}-{k})/{stride}+1 is not an integer")
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d: non-positive output size {Ho}x{Wo}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]           # [b,n,Ho,Wo,k,k]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(b, Ho * Wo, n * k * k)
    wrow = w.data.reshape(m, n * k * k)
    out = (cols @ wrow.T).transpose(0, 2, 1).reshape(b, m, Ho, Wo)

    def rule(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b, Ho * Wo, m)
        grad_w = np.einsum("bpm,bpc->mc", gmat, cols).reshape(m, n, k, k)
        gcols = (gmat @ wrow).reshape(b, Ho, Wo, n, k, k).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                gxp[:, :, ki:ki + stride * Ho:stride,
                    kj:kj + stride * Wo:stride] += gcols[:, :, :, :, ki, kj]
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        return gxp, grad_w

    return custom_grad(out, (x, w), rule, op="conv2d")


@dataclass
class BnState:
    """Per-channel batch-norm statistics and hyperparameters.

    Running statistics are plain arrays mutated by train-mode forwards; the
    affine gamma/beta are trainable and travel through the tape.
    """

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "BnState":
        return cls(np.zeros(channels), np.ones(channels), momentum, eps)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BnState,
              mode: str = "train") -> Tensor:
    """Per-channel normalization of a [b,c,H,W] tensor.

    Train mode normalizes with batch statistics and folds them into the
    running averages; eval mode normalizes with the running statistics.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm: expected rank-4 input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: affine shape {gamma.shape} != channels ({c},)")
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    axes = (0, 2, 3)
    xd = x.data
    gd = gamma.data.reshape(1, c, 1, 1)

    if mode == "train":
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (xd - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
        state.running_mean *= 1.0 - state.momentum
        state.running_mean += state.momentum * mu
        state.running_var *= 1.0 - state.momentum
        state.running_var += state.momentum * var
        n = xd.shape[0] * xd.shape[2] * xd.shape[3]

        def rule(g):
            dgamma = np.sum(g * xhat, axis=axes)
            dbeta = np.sum(g, axis=axes)
            dxhat = g * gd
            mean_dxhat = dxhat.sum(axis=axes) / n
            mean_dxhat_xhat = (dxhat * xhat).sum(axis=axes) / n
            dx = inv.reshape(1, c, 1, 1) * (
                dxhat - mean_dxhat.reshape(1, c, 1, 1)
                - xhat * mean_dxhat_xhat.reshape(1, c, 1, 1))
            return dx, dgamma, dbeta
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (xd - state.running_mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)

        def rule(g):
            dgamma = np.sum(g * xhat, axis=axes)
            dbeta = np.sum(g, axis=axes)
            return g * gd * inv.reshape(1, c, 1, 1), dgamma, dbeta

    out = gd * xhat + beta.data.reshape(1, c, 1, 1)
    return custom_grad(out, (x, gamma, beta), rule, op="batchnorm")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map [b,p] @ [q,p]^T (+ [q])."""
    out = matmul(x, transpose(w))
    return add(out, b) if b is not None else out


def avg_pool_full(x: Tensor) -> Tensor:
    """Global average pool [b,c,H,W] -> [b,c]."""
    if x.data.ndim != 4:
        raise ShapeError(f"avg_pool_full: expected rank-4 input, got {x.shape}")
    b, c, H, W = x.shape
    out = x.data.mean(axis=(2, 3))

    def rule(g):
        return (np.broadcast_to(g[:, :, None, None] / (H * W), (b, c, H, W)),)

    return custom_grad(out, (x,), rule, op="avg_pool")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup [V,e][ids] with scatter-add backward."""
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ValueError(f"embedding: token id out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def rule(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return custom_grad(out, (table,), rule, op="embedding")


# ---------------------------------------------------------------------------
# gated blocks
# ---------------------------------------------------------------------------

@dataclass
class ConvUnit:
    """Conv -> batch norm -> (filter gate) -> ReLU.

    The gate sits after batch norm, where a per-channel scale is not
    normalized away, and before the nonlinearity.
    """

    weights: np.ndarray                # [m, n, k, k]
    bn_gamma: np.ndarray               # [m]
    bn_beta: np.ndarray                # [m]
    bn: BnState
    gate: GateParam | None = None
    bias: np.ndarray | None = None     # [m]
    stride: int = 1
    padding: int = 1
    relu: bool = True
    name: str = "conv"

    def __post_init__(self):
        m = self.weights.shape[0]
        if self.gate is not None and self.gate.dim != m:
            raise ShapeError(f"{self.name}: gate dimension {self.gate.dim} != {m} filters")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.w": self.weights,
               f"{self.name}.bn.gamma": self.bn_gamma,
               f"{self.name}.bn.beta": self.bn_beta}
        if self.bias is not None:
            out[f"{self.name}.b"] = self.bias
        if self.gate is not None:
            out[f"{self.name}.gate.alpha"] = self.gate.alpha
        return out

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable buffers that must survive a checkpoint."""
        return {f"{self.name}.bn.running_mean": self.bn.running_mean,
                f"{self.name}.bn.running_var": self.bn.running_var}

    def forward(self, tape: Tape, x: Tensor, mode: str = "train") -> Tensor:
        m = self.out_channels
        w = tape.param(f"{self.name}.w", self.weights)
        y = conv2d(x, w, self.stride, self.padding)
        if self.bias is not None:
            b = tape.param(f"{self.name}.b", self.bias)
            y = add(y, reshape(b, (m, 1, 1)))
        gamma = tape.param(f"{self.name}.bn.gamma", self.bn_gamma)
        beta = tape.param(f"{self.name}.bn.beta", self.bn_beta)
        y = batchnorm(y, gamma, beta, self.bn, mode)
        if self.gate is not None:
            a = tape.param(f"{self.name}.gate.alpha", self.gate.alpha)
            y = apply_gate(y, self.gate, axis=1, alpha=a)
        return relu(y) if self.relu else y


@dataclass
class ResidualBlock:
    """Two 3x3 conv units with a skip path and an optional branch gate.

    When the branch gate is masked the output equals the skip path exactly,
    so the whole branch can be dropped at inference.  Downsampling blocks use
    an ungated 1x1 projection on the skip path.
    """

    unit1: ConvUnit
    unit2: ConvUnit                     # constructed with relu=False
    gate: GateParam | None = None       # d = 1, subnetwork granularity
    down_w: np.ndarray | None = None    # [m, n, 1, 1] projection
    down_gamma: np.ndarray | None = None
    down_beta: np.ndarray | None = None
    down_bn: BnState | None = None
    stride: int = 1
    name: str = "block"

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.unit1.params())
        out.update(self.unit2.params())
        if self.gate is not None:
            out[f"{self.name}.gate.alpha"] = self.gate.alpha
        if self.down_w is not None:
            out[f"{self.name}.down.w"] = self.down_w
            out[f"{self.name}.down.bn.gamma"] = self.down_gamma
            out[f"{self.name}.down.bn.beta"] = self.down_beta
        return out

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.unit1.state())
        out.update(self.unit2.state())
        if self.down_bn is not None:
            out[f"{self.name}.down.bn.running_mean"] = self.down_bn.running_mean
            out[f"{self.name}.down.bn.running_var"] = self.down_bn.running_var
        return out

    def forward(self, tape: Tape, x: Tensor, mode: str = "train") -> Tensor:
        branch = self.unit2.forward(tape, self.unit1.forward(tape, x, mode), mode)
        if self.down_w is not None:
            dw = tape.param(f"{self.name}.down.w", self.down_w)
            skip = conv2d(x, dw, self.stride, 0)
            dg = tape.param(f"{self.name}.down.bn.gamma", self.down_gamma)
            db = tape.param(f"{self.name}.down.bn.beta", self.down_beta)
            skip = batchnorm(skip, dg, db, self.down_bn, mode)
        else:
            skip = x
        if self.gate is not None:
            a = tape.param(f"{self.name}.gate.alpha", self.gate.alpha)
            branch = apply_gate(branch, self.gate, alpha=a)
        return add(branch, skip)


LSTM_GATES = ("f", "i", "g", "o")


@dataclass
class LstmCell:
    """LSTM cell with optional per-node gates on f/i/g/o.

    Gated form scales each pre-activation by its alpha and multiplies the
    post-activation by the hard mask:

        f_t = I(a_f) * sigma(a_f * (W_f [h_{t-1}, x_t] + b_f))

    and likewise for i, g (tanh) and o; then c_t = f_t*c_{t-1} + i_t*g_t and
    h_t = o_t * tanh(c_t).  A masked node index is exactly zero in that
    recurrence gate for every batch element.
    """

    weights: dict[str, np.ndarray]          # {"f": [h, h+e], ...}
    biases: dict[str, np.ndarray]           # {"f": [h], ...}
    gates: dict[str, GateParam] | None = None
    name: str = "lstm"

    def __post_init__(self):
        shapes = {k: self.weights[k].shape for k in LSTM_GATES}
        if len(set(shapes.values())) != 1:
            raise ShapeError(f"{self.name}: weight matrices differ in shape: {shapes}")
        h = self.hidden_dim
        for k in LSTM_GATES:
            if self.biases[k].shape != (h,):
                raise ShapeError(f"{self.name}: bias {k} shape {self.biases[k].shape}")
            if self.gates is not None and self.gates[k].dim != h:
                raise ShapeError(f"{self.name}: gate {k} dim {self.gates[k].dim} != {h}")

    @property
    def hidden_dim(self) -> int:
        return self.weights["f"].shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights["f"].shape[1] - self.hidden_dim

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k in LSTM_GATES:
            out[f"{self.name}.W_{k}"] = self.weights[k]
            out[f"{self.name}.b_{k}"] = self.biases[k]
            if self.gates is not None:
                out[f"{self.name}.gate_{k}.alpha"] = self.gates[k].alpha
        return out

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        """Register this cell's parameters once per tape; returns the nodes."""
        nodes = {}
        for k in LSTM_GATES:
            nodes[f"W_{k}"] = tape.param(f"{self.name}.W_{k}", self.weights[k])
            nodes[f"b_{k}"] = tape.param(f"{self.name}.b_{k}", self.biases[k])
            if self.gates is not None:
                nodes[f"alpha_{k}"] = tape.param(f"{self.name}.gate_{k}.alpha",
                                                 self.gates[k].alpha)
        return nodes

    def step(self, nodes: dict[str, Tensor], x_t: Tensor, h_prev: Tensor,
             c_prev: Tensor) -> tuple[Tensor, Tensor]:
        z = concat_cols(h_prev, x_t)
        acts = {}
        for k in LSTM_GATES:
            pre = add(matmul(z, transpose(nodes[f"W_{k}"])), nodes[f"b_{k}"])
            nonlin = tanh if k == "g" else sigmoid
            if self.gates is not None:
                alpha = nodes[f"alpha_{k}"]
                act = nonlin(mul(pre, alpha))
                acts[k] = apply_mask(act, self.gates[k], axis=1, alpha=alpha)
            else:
                acts[k] = nonlin(pre)
        c_t = add(mul(acts["f"], c_prev), mul(acts["i"], acts["g"]))
        h_t = mul(acts["o"], tanh(c_t))
        return h_t, c_t
