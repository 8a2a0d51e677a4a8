"""Optimal label pool: per-image store of the top-B best-ever pseudo-labels.

A full pool replaces an entry only when the candidate is strictly lower in
at least two of the three uncertainty metrics; when several entries are
beaten, one is replaced uniformly at random under the caller's seed. The
mask-intrinsic metrics (absolute and relative uncertainty) are cached on
each entry; differential uncertainty depends on the current previous
prediction and is recomputed at every update so all comparisons share one
reference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .entropy import DEFAULT_THETA, UncertaintyScores, score_mask, u_diff
from .errors import FormatError
from .raster import GrayMask, load_mask, save_mask

DEFAULT_CAPACITY = 3


@dataclass(frozen=True)
class PoolEntry:
    mask: GrayMask
    u_abs: float
    u_rel: float
    epoch_added: int


@dataclass(frozen=True)
class LabelPool:
    """Pool of one image's stored pseudo-labels (value semantics)."""

    capacity: int = DEFAULT_CAPACITY
    entries: tuple[PoolEntry, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if len(self.entries) > self.capacity:
            raise ValueError("pool over capacity")

    def __len__(self) -> int:
        return len(self.entries)


def score_candidate(
    candidate: GrayMask, prev_pred: GrayMask, theta: float = DEFAULT_THETA
) -> UncertaintyScores:
    """Uncertainty triple of a candidate pseudo-label against prev_pred."""
    return score_mask(candidate, prev_pred, theta)


def dominates(candidate: UncertaintyScores, entry: UncertaintyScores) -> bool:
    """True when the candidate is strictly lower in >= 2 of the 3 metrics.

    Infinite values lose every comparison; equal values never count.
    """
    wins = sum(
        c < e for c, e in zip(candidate.as_tuple(), entry.as_tuple())
    )
    return wins >= 2


def update_pool(
    pool: LabelPool,
    candidate: GrayMask,
    prev_pred: GrayMask,
    rng_seed: int,
    epoch: int = 0,
    theta: float = DEFAULT_THETA,
    always_replace: bool = False,
) -> LabelPool:
    """One pool update step; returns a new pool, never mutating the input.

    Below capacity the candidate is appended unconditionally. At capacity,
    entries beaten under the 2-of-3 rule are collected and one of them —
    chosen uniformly via ``rng_seed`` — is replaced; if none are beaten the
    pool is returned unchanged. ``always_replace`` is the pool-ablation
    switch: a full pool unconditionally evicts its oldest entry.
    """
    cand_scores = score_candidate(candidate, prev_pred, theta)
    new_entry = PoolEntry(
        mask=candidate,
        u_abs=cand_scores.u_abs,
        u_rel=cand_scores.u_rel,
        epoch_added=epoch,
    )
    if len(pool.entries) < pool.capacity:
        return replace(pool, entries=pool.entries + (new_entry,))

    if always_replace:
        oldest = min(range(len(pool.entries)), key=lambda i: pool.entries[i].epoch_added)
        entries = list(pool.entries)
        entries[oldest] = new_entry
        return replace(pool, entries=tuple(entries))

    beaten = []
    for i, entry in enumerate(pool.entries):
        entry_scores = UncertaintyScores(
            u_abs=entry.u_abs,
            u_rel=entry.u_rel,
            u_diff=u_diff(entry.mask, prev_pred, theta),
        )
        if dominates(cand_scores, entry_scores):
            beaten.append(i)
    if not beaten:
        return pool
    rng = np.random.default_rng(rng_seed)
    victim = beaten[int(rng.integers(len(beaten)))]
    entries = list(pool.entries)
    entries[victim] = new_entry
    return replace(pool, entries=tuple(entries))


def snapshot(pool: LabelPool) -> tuple[PoolEntry, ...]:
    """Immutable view of the current entries for supervision."""
    return pool.entries


def save_pool(pool: LabelPool, pool_dir, image_id: str) -> None:
    """Persist a pool as entry_<b>.mskf files plus a scores.json sidecar."""
    d = Path(pool_dir) / image_id
    d.mkdir(parents=True, exist_ok=True)
    for old in d.glob("entry_*.mskf"):
        old.unlink()
    scores = []
    for b, entry in enumerate(pool.entries):
        save_mask(entry.mask, d / f"entry_{b}.mskf")
        scores.append(
            {
                "u_abs": entry.u_abs,
                "u_rel": "inf" if math.isinf(entry.u_rel) else entry.u_rel,
                "epoch": entry.epoch_added,
            }
        )
    (d / "scores.json").write_text(
        json.dumps({"entries": scores}, sort_keys=True, indent=0)
    )


def load_pool(pool_dir, image_id: str, capacity: int = DEFAULT_CAPACITY) -> LabelPool:
    """Load a persisted pool; an absent directory yields an empty pool."""
    d = Path(pool_dir) / image_id
    if not d.exists():
        return LabelPool(capacity=capacity)
    try:
        meta = json.loads((d / "scores.json").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{d}: missing scores.json") from exc
    entries = []
    for b, rec in enumerate(meta["entries"]):
        mask = load_mask(d / f"entry_{b}.mskf")
        u_rel_val = math.inf if rec["u_rel"] == "inf" else float(rec["u_rel"])
        entries.append(
            PoolEntry(
                mask=mask,
                u_abs=float(rec["u_abs"]),
                u_rel=u_rel_val,
                epoch_added=int(rec["epoch"]),
            )
        )
    if len(entries) > capacity:
        raise FormatError(f"{d}: {len(entries)} entries exceed capacity {capacity}")
    return LabelPool(capacity=capacity, entries=tuple(entries))
