"""Registry of prunable entities: sparsity statistics and cost accounting.

Parameter accounting marks a boolean "dead" grid over every weight array:
pruning an entity kills the slices it owns plus any dependency-linked slices
downstream (a pruned filter also kills the next layer's matching input
channel).  Overlaps therefore count once, and active + pruned = total holds
at every snapshot.  Gate scaling factors are bookkeeping state, not network
weights, and are excluded from the counts.

FLOPs convention (documented, not taken from anywhere): one multiply-
accumulate = 2 FLOPs; batch norm costs 2 FLOPs per output element, ReLU and
residual adds 1; the gate multiply itself is foldable and costs nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gate import GateParam

REPORT_VERSION = 1

# index of an owned/dependent slice: (param name, numpy index tuple)
Slice = tuple[str, tuple]


@dataclass
class EntityRecord:
    """One prunable entity and the static cost attributed to it."""

    entity_id: str
    granularity: str
    gate: GateParam
    component: int                     # index into gate.alpha
    owned: list[Slice] = field(default_factory=list)
    deps: list[Slice] = field(default_factory=list)
    macs: int = 0                      # dense per-application MAC cost
    group: str = ""                    # reporting bucket (layer name)

    def is_active(self) -> bool:
        return bool(self.gate.mask()[self.component])


@dataclass
class PruneReport:
    step: int
    active: dict[str, bool]
    active_entities: int
    K: int
    pruned_ratio: float
    total_params: int
    pruned_params: int
    pruned_params_fraction: float
    total_flops: int
    live_flops: int
    pruned_flops_fraction: float
    per_group: dict[str, tuple[int, int]]            # group -> (active, total)
    events: list[tuple[int, str, str]]               # (step, entity_id, "1->0"|"0->1")

    def to_text(self) -> str:
        lines = [
            f"maskprune prune report v{REPORT_VERSION}",
            f"step: {self.step}",
            f"entities: {self.active_entities} active / {self.K} total",
            f"pruned ratio x100: {100.0 * self.pruned_ratio:.2f}",
            f"params: {self.pruned_params} pruned / {self.total_params} total "
            f"(fraction {self.pruned_params_fraction:.6f})",
            f"flops: {self.total_flops - self.live_flops} pruned / {self.total_flops} "
            f"total (fraction {self.pruned_flops_fraction:.6f})",
            "per-group:",
        ]
        for group, (act, tot) in self.per_group.items():
            lines.append(f"  {group}: {act}/{tot} active")
        lines.append(f"rejuvenation events: {len(self.events)}")
        for step, eid, direction in self.events:
            lines.append(f"  step {step}: {eid} {direction}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "report_version": REPORT_VERSION,
            "step": self.step,
            "active_entities": self.active_entities,
            "K": self.K,
            "pruned_ratio": self.pruned_ratio,
            "total_params": self.total_params,
            "pruned_params": self.pruned_params,
            "pruned_params_fraction": self.pruned_params_fraction,
            "total_flops": self.total_flops,
            "live_flops": self.live_flops,
            "pruned_flops_fraction": self.pruned_flops_fraction,
            "per_group": {k: list(v) for k, v in self.per_group.items()},
            "events": [list(e) for e in self.events],
        }
        return json.dumps(payload, sort_keys=True)


def conv_macs(m: int, n: int, k: int, out_h: int, out_w: int) -> int:
    """Multiply-accumulates of one conv application (m filters, n in-channels)."""
    return m * n * k * k * out_h * out_w


class PruneManager:
    """Tracks every prunable entity of one model across training.

    The model contract: ``params()`` (name -> array), ``entities()`` (one
    EntityRecord per gate component, each gate appearing exactly once) and
    ``flops(active)`` (total FLOPs given per-entity liveness).
    """

    def __init__(self, model):
        self.model = model
        self.records: list[EntityRecord] = list(model.entities())
        seen: dict[int, set[int]] = {}
        ids = set()
        for rec in self.records:
            comps = seen.setdefault(id(rec.gate), set())
            if rec.component in comps:
                raise ValueError(f"gate component registered twice: {rec.entity_id}")
            comps.add(rec.component)
            if rec.entity_id in ids:
                raise ValueError(f"duplicate entity id: {rec.entity_id}")
            ids.add(rec.entity_id)
        model_gates = {id(g) for g in model.gates()}
        if set(seen) != model_gates:
            raise ValueError("entity records do not cover the model's gates exactly")
        for g in model.gates():
            if len(seen[id(g)]) != g.dim:
                raise ValueError(f"gate {g.name!r}: {len(seen[id(g)])} records "
                                 f"for dimension {g.dim}")
        self._weight_names = [n for n in model.params() if not n.endswith(".alpha")]
        self._total_params = int(sum(model.params()[n].size for n in self._weight_names))
        self._total_flops = int(model.flops({r.entity_id: True for r in self.records}))
        self._last_active = {r.entity_id: True for r in self.records}
        self.events: list[tuple[int, str, str]] = []

    @property
    def K(self) -> int:
        return len(self.records)

    def active_flags(self) -> dict[str, bool]:
        return {r.entity_id: r.is_active() for r in self.records}

    def snapshot(self, step: int = 0) -> PruneReport:
        """Recompute masks, account params/FLOPs, log mask flips since last call."""
        params = self.model.params()
        active = self.active_flags()

        for eid, now in active.items():
            was = self._last_active[eid]
            if now != was:
                self.events.append((step, eid, "1->0" if was else "0->1"))
        self._last_active = dict(active)

        dead = {n: np.zeros(params[n].shape, dtype=bool) for n in self._weight_names}
        for rec in self.records:
            if active[rec.entity_id]:
                continue
            for name, idx in list(rec.owned) + list(rec.deps):
                dead[name][idx] = True
        pruned_params = int(sum(g.sum() for g in dead.values()))

        live_flops = int(self.model.flops(active))
        n_active = sum(active.values())

        per_group: dict[str, list[int]] = {}
        for rec in self.records:
            bucket = per_group.setdefault(rec.group or rec.entity_id, [0, 0])
            bucket[1] += 1
            bucket[0] += int(active[rec.entity_id])

        return PruneReport(
            step=step,
            active=active,
            active_entities=n_active,
            K=self.K,
            pruned_ratio=1.0 - n_active / self.K,
            total_params=self._total_params,
            pruned_params=pruned_params,
            pruned_params_fraction=pruned_params / self._total_params
            if self._total_params else 0.0,
            total_flops=self._total_flops,
            live_flops=live_flops,
            pruned_flops_fraction=1.0 - live_flops / self._total_flops
            if self._total_flops else 0.0,
            per_group={k: (v[0], v[1]) for k, v in per_group.items()},
            events=list(self.events),
        )


def replay_events(entity_ids: Sequence[str],
                  events: Sequence[tuple[int, str, str]]) -> dict[str, bool]:
    """Apply an event log to the initial all-active state."""
    state = {eid: True for eid in entity_ids}
    for _, eid, direction in events:
        state[eid] = direction == "0->1"
    return state
