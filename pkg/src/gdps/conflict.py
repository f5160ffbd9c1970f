"""Sample-level gradient conflict metrics and the shared-ratio decision rule.

Self-task similarity averages gradient cosines across sample pairs inside one
task; cross-task similarity averages them across tasks.  Their gap delta
feeds a piecewise rule that picks how much of a layer's width stays shared:

    0.75  if delta < low      (default low  = 0.05)
    0.50  if low <= delta < high
    0.25  if delta >= high    (default high = 0.15)

Purity is this toolkit's own bounded stand-in for "how benign are the
cross-task interactions": the fraction of non-degenerate cross-task sample
pairs whose cosine is >= 0.  It is labeled non-standard in every report.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import bundle as gb
from .errors import ValidationError
from .parallel import ordered_map

DEFAULT_LOW = 0.05
DEFAULT_HIGH = 0.15
DEFAULT_RATIOS = (0.75, 0.50, 0.25)
SAMPLE_CAP = 512
DEGENERATE_WARN_FRACTION = 0.10


@dataclass(frozen=True)
class RatioThresholds:
    low: float = DEFAULT_LOW
    high: float = DEFAULT_HIGH
    ratios: tuple[float, float, float] = DEFAULT_RATIOS

    def __post_init__(self):
        if not 0 < self.low < self.high:
            raise ValidationError(f"thresholds need 0 < low < high, got {self.low}, {self.high}")
        r = self.ratios
        if len(r) != 3 or not (r[0] > r[1] > r[2]) or not all(0 < x < 1 for x in r):
            raise ValidationError(f"ratios must be strictly decreasing in (0,1), got {r}")

    def to_dict(self) -> dict:
        return {"low": self.low, "high": self.high, "ratios": list(self.ratios)}


@dataclass(frozen=True)
class LayerConflict:
    layer: str
    s_self: float
    s_cross: float
    delta: float
    purity: float
    degenerate_pairs: int
    total_pairs: int

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "s_self": self.s_self,
            "s_cross": self.s_cross,
            "delta": self.delta,
            "purity": self.purity,
            "purity_definition": "fraction of non-degenerate cross-task pairs with cosine >= 0 (toolkit-defined)",
            "degenerate_pairs": self.degenerate_pairs,
            "total_pairs": self.total_pairs,
        }


@dataclass(frozen=True)
class ConflictReport:
    layers: tuple[LayerConflict, ...]
    candidate_layers: tuple[str, ...]
    delta: float
    shared_ratio: float
    thresholds: RatioThresholds
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "layers": [lc.to_dict() for lc in self.layers],
            "candidate_layers": list(self.candidate_layers),
            "delta": self.delta,
            "shared_ratio": self.shared_ratio,
            "thresholds": self.thresholds.to_dict(),
            "warnings": list(self.warnings),
        }


def _normalized_rows(matrix: np.ndarray):
    """Unit rows plus a boolean mask of non-degenerate (nonzero-norm) rows."""
    g = matrix.astype(np.float64)
    norms = np.linalg.norm(g, axis=1)
    ok = norms > 0.0
    unit = np.zeros_like(g)
    unit[ok] = g[ok] / norms[ok, None]
    return unit, ok


def _maybe_subsample(matrix: np.ndarray, cap: int, seed: int) -> np.ndarray:
    if matrix.shape[0] <= cap:
        return matrix
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    pick = np.sort(rng.choice(matrix.shape[0], size=cap, replace=False))
    return matrix[pick]


def self_similarity(
    bundle: gb.GradientBundle, task: str, layer: str, cap: int = SAMPLE_CAP, seed: int = 2343
) -> float:
    """Mean cosine over all unordered sample pairs within one task."""
    value, _, _ = _self_similarity_counted(bundle, task, layer, cap, seed)
    return value


def _self_similarity_counted(bundle, task, layer, cap=SAMPLE_CAP, seed=2343):
    g = gb.sample_gradients(bundle, task, layer)
    if g.shape[0] < 2:
        raise ValidationError(f"self_similarity needs >= 2 samples for ({task}, {layer})")
    g = _maybe_subsample(g, cap, seed)
    unit, ok = _normalized_rows(g)
    m = g.shape[0]
    gram = np.clip(unit @ unit.T, -1.0, 1.0)
    iu = np.triu_indices(m, k=1)
    valid = np.outer(ok, ok)[iu]
    total_pairs = iu[0].size
    degenerate = int(total_pairs - valid.sum())
    if valid.sum() == 0:
        return 0.0, degenerate, total_pairs
    value = float(gram[iu][valid].mean())
    return value, degenerate, total_pairs


def cross_similarity(
    bundle: gb.GradientBundle,
    task_a: str,
    task_b: str,
    layer: str,
    cap: int = SAMPLE_CAP,
    seed: int = 2343,
) -> float:
    """Mean cosine over the full cross product of two tasks' sample rows."""
    value, _, _, _ = _cross_similarity_counted(bundle, task_a, task_b, layer, cap, seed)
    return value


def _cross_similarity_counted(bundle, task_a, task_b, layer, cap=SAMPLE_CAP, seed=2343):
    ga = _maybe_subsample(gb.sample_gradients(bundle, task_a, layer), cap, seed)
    gbm = _maybe_subsample(gb.sample_gradients(bundle, task_b, layer), cap, seed + 1)
    ua, oka = _normalized_rows(ga)
    ub, okb = _normalized_rows(gbm)
    gram = np.clip(ua @ ub.T, -1.0, 1.0)
    valid = np.outer(oka, okb)
    total_pairs = gram.size
    degenerate = int(total_pairs - valid.sum())
    if valid.sum() == 0:
        return 0.0, degenerate, total_pairs, 0
    vals = gram[valid]
    value = float(vals.mean())
    nonneg = int((vals >= 0.0).sum())
    return value, degenerate, total_pairs, nonneg


def layer_conflict(
    bundle: gb.GradientBundle, layer: str, cap: int = SAMPLE_CAP, seed: int = 2343
) -> LayerConflict:
    """Per-layer S_self, S_cross, their gap delta, and cross-pair purity."""
    tasks = bundle.tasks
    if len(tasks) < 2:
        raise ValidationError(">= 2 tasks required for cross-task conflict analysis")

    self_parts = ordered_map(
        lambda t: _self_similarity_counted(bundle, t, layer, cap, seed), tasks
    )
    pairs = list(combinations(tasks, 2))
    cross_parts = ordered_map(
        lambda p: _cross_similarity_counted(bundle, p[0], p[1], layer, cap, seed), pairs
    )

    s_self = float(np.mean([p[0] for p in self_parts]))
    s_cross = float(np.mean([p[0] for p in cross_parts]))
    degenerate = sum(p[1] for p in self_parts) + sum(p[1] for p in cross_parts)
    total = sum(p[2] for p in self_parts) + sum(p[2] for p in cross_parts)

    cross_valid = sum(p[2] - p[1] for p in cross_parts)
    cross_nonneg = sum(p[3] for p in cross_parts)
    purity = float(cross_nonneg / cross_valid) if cross_valid else 1.0

    return LayerConflict(
        layer=layer,
        s_self=s_self,
        s_cross=s_cross,
        delta=s_self - s_cross,
        purity=purity,
        degenerate_pairs=degenerate,
        total_pairs=total,
    )


def aggregate_delta(reports, candidate_layers) -> float:
    """Arithmetic mean of per-layer deltas over the candidate set."""
    candidates = list(candidate_layers)
    if not candidates:
        raise ValidationError("candidate layer set is empty")
    by_layer = {r.layer: r for r in reports}
    missing = [l for l in candidates if l not in by_layer]
    if missing:
        raise ValidationError(f"candidate layers missing from reports: {missing}")
    return float(np.mean([by_layer[l].delta for l in candidates]))


def map_shared_ratio(delta: float, thresholds: RatioThresholds = RatioThresholds()) -> float:
    """Piecewise step rule; the middle interval is closed on the left."""
    if not np.isfinite(delta):
        raise ValidationError(f"delta must be finite, got {delta}")
    if delta < thresholds.low:
        return thresholds.ratios[0]
    if delta < thresholds.high:
        return thresholds.ratios[1]
    return thresholds.ratios[2]


def ratio_branch(delta: float, thresholds: RatioThresholds = RatioThresholds()) -> str:
    """Human-readable record of which branch fired, for decision traces."""
    if delta < thresholds.low:
        return f"delta < {thresholds.low}"
    if delta < thresholds.high:
        return f"{thresholds.low} <= delta < {thresholds.high}"
    return f"delta >= {thresholds.high}"


def rank_layers(
    bundle: gb.GradientBundle, layers=None, cap: int = SAMPLE_CAP, seed: int = 2343
) -> list[LayerConflict]:
    """Layers sorted by delta desc; ties broken by lower purity, then id."""
    layers = list(layers) if layers is not None else list(bundle.layers)
    if not layers:
        raise ValidationError("rank_layers needs at least one layer")
    reports = ordered_map(lambda l: layer_conflict(bundle, l, cap, seed), layers)
    return sorted(reports, key=lambda r: (-r.delta, r.purity, r.layer))


def conflict_report(
    bundle: gb.GradientBundle,
    candidate_layers=None,
    thresholds: RatioThresholds = RatioThresholds(),
    cap: int = SAMPLE_CAP,
    seed: int = 2343,
) -> ConflictReport:
    """Full Method-B result: ranked layers, aggregate delta, shared ratio."""
    candidates = tuple(candidate_layers) if candidate_layers else tuple(bundle.layers)
    ranked = rank_layers(bundle, candidates, cap, seed)
    delta = aggregate_delta(ranked, candidates)
    ratio = map_shared_ratio(delta, thresholds)
    warnings = []
    for lc in ranked:
        if lc.total_pairs and lc.degenerate_pairs / lc.total_pairs > DEGENERATE_WARN_FRACTION:
            warnings.append(
                f"layer {lc.layer}: {lc.degenerate_pairs}/{lc.total_pairs} "
                "gradient pairs degenerate (zero norm); means may be unreliable"
            )
    return ConflictReport(
        layers=tuple(ranked),
        candidate_layers=candidates,
        delta=delta,
        shared_ratio=ratio,
        thresholds=thresholds,
        warnings=tuple(warnings),
    )
