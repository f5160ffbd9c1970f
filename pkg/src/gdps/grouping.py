"""Task grouping from mean-gradient geometry.

Builds the task-level cosine similarity matrix, converts it to distances
(d = 1 - s), and partitions tasks two ways: Lloyd k-means on the distance
profiles and single-linkage agglomeration on the distance matrix.  The two
partitions are cross-checked; agreement is tagged ``consensus``.

All tie-breaks are lexicographic on task identifiers so results are
reproducible across platforms and thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bundle as gb
from .errors import ValidationError
from .linalg import cosine_flagged

DEFAULT_GROUPS = 2


@dataclass(frozen=True)
class SimilarityMatrix:
    tasks: tuple[str, ...]
    s: np.ndarray
    degenerate_count: int = 0

    def validate(self, tol: float = 1e-12) -> None:
        n = len(self.tasks)
        if self.s.shape != (n, n):
            raise ValidationError(f"similarity matrix shape {self.s.shape} != ({n}, {n})")
        if not np.allclose(self.s, self.s.T, atol=tol):
            raise ValidationError("similarity matrix is not symmetric")
        if not np.allclose(np.diag(self.s), 1.0, atol=tol):
            raise ValidationError("similarity matrix diagonal is not 1")
        if self.s.max() > 1 + tol or self.s.min() < -1 - tol:
            raise ValidationError("similarity entries outside [-1, 1]")


@dataclass(frozen=True)
class DistanceMatrix:
    tasks: tuple[str, ...]
    d: np.ndarray

    def validate(self, tol: float = 1e-12) -> None:
        n = len(self.tasks)
        if self.d.shape != (n, n):
            raise ValidationError(f"distance matrix shape {self.d.shape} != ({n}, {n})")
        if not np.allclose(self.d, self.d.T, atol=tol):
            raise ValidationError("distance matrix is not symmetric")
        if not np.allclose(np.diag(self.d), 0.0, atol=tol):
            raise ValidationError("distance matrix diagonal is not 0")
        if self.d.min() < -tol or self.d.max() > 2 + tol:
            raise ValidationError("distance entries outside [0, 2]")


@dataclass(frozen=True)
class GroupingPlan:
    """An exact partition of the task list into parameter-sharing groups."""

    groups: tuple[tuple[str, ...], ...]
    method: str
    k: int
    warnings: tuple[str, ...] = ()

    def validate(self, tasks=None) -> None:
        flat = [t for g in self.groups for t in g]
        if len(flat) != len(set(flat)):
            raise ValidationError("grouping assigns some task to more than one group")
        if any(len(g) == 0 for g in self.groups):
            raise ValidationError("grouping contains an empty group")
        if not 1 <= self.k <= len(flat):
            raise ValidationError(f"group count k={self.k} outside [1, {len(flat)}]")
        if self.k != len(self.groups):
            raise ValidationError(f"k={self.k} but {len(self.groups)} groups present")
        if tasks is not None and set(flat) != set(tasks):
            raise ValidationError(
                f"grouping covers {sorted(flat)} but the task list is {sorted(tasks)}"
            )

    def group_of(self, task: str) -> int:
        for i, g in enumerate(self.groups):
            if task in g:
                return i
        raise ValidationError(f"task {task!r} not in any group")

    def to_dict(self) -> dict:
        return {"method": self.method, "k": self.k, "groups": [list(g) for g in self.groups]}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupingPlan":
        plan = cls(
            groups=tuple(tuple(g) for g in d["groups"]),
            method=str(d["method"]),
            k=int(d["k"]),
        )
        plan.validate()
        return plan


def _canonical_groups(groups) -> tuple[tuple[str, ...], ...]:
    # Members sorted within groups; groups ordered by size then leading member.
    norm = [tuple(sorted(g)) for g in groups if g]
    norm.sort(key=lambda g: (len(g), g[0]))
    return tuple(norm)


def similarity_matrix(bundle: gb.GradientBundle, layer: str) -> SimilarityMatrix:
    """Pairwise cosine between per-task mean gradients; diagonal forced to 1."""
    tasks = bundle.tasks
    means = [gb.mean_gradient(bundle, t, layer) for t in tasks]
    n = len(tasks)
    s = np.eye(n)
    degenerate = 0
    for i in range(n):
        for j in range(i + 1, n):
            c, flag = cosine_flagged(means[i], means[j])
            s[i, j] = s[j, i] = c
            degenerate += int(flag)
    out = SimilarityMatrix(tuple(tasks), s, degenerate_count=degenerate)
    out.validate()
    return out


def to_distance(sim: SimilarityMatrix) -> DistanceMatrix:
    """Elementwise d = 1 - s with an exactly-zero diagonal."""
    sim.validate()
    d = 1.0 - sim.s
    np.fill_diagonal(d, 0.0)
    out = DistanceMatrix(sim.tasks, d)
    out.validate()
    return out


@dataclass(frozen=True)
class KmeansState:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    restarts: int = field(default=1)


def _kmeans_once(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int):
    n = points.shape[0]
    # k-means++ seeding.
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    for c in range(1, k):
        d2 = np.min(
            ((points[:, None, :] - centroids[None, :c, :]) ** 2).sum(axis=2), axis=1
        )
        total = d2.sum()
        if total <= 0:
            centroids[c] = points[int(rng.integers(n))]
            continue
        probs = d2 / total
        centroids[c] = points[int(rng.choice(n, p=probs))]

    assign = np.full(n, -1)
    it = 0
    for it in range(1, max_iter + 1):
        dist2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist2.argmin(axis=1)
        if (new_assign == assign).all():
            break
        assign = new_assign
        for c in range(k):
            mask = assign == c
            if mask.any():
                centroids[c] = points[mask].mean(axis=0)
            else:
                # Re-seed an empty cluster at the farthest point.
                far = dist2.min(axis=1).argmax()
                centroids[c] = points[far]
    dist2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = dist2.argmin(axis=1)
    inertia = float(dist2[np.arange(n), assign].sum())
    return centroids, assign, inertia, it


def kmeans(
    points,
    k: int,
    seed: int,
    restarts: int = 10,
    max_iter: int = 100,
) -> KmeansState:
    """Lloyd k-means, best of `restarts` seeded runs by inertia."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValidationError("kmeans expects a 2-D array of feature vectors")
    n = pts.shape[0]
    if k < 1:
        raise ValidationError("kmeans needs k >= 1")
    if k > n:
        raise ValidationError(f"kmeans needs k <= n ({k} > {n})")
    streams = np.random.SeedSequence(seed).spawn(restarts)
    best = None
    for stream in streams:
        rng = np.random.default_rng(stream)
        cent, assign, inertia, it = _kmeans_once(pts, k, rng, max_iter)
        if best is None or inertia < best[2] - 1e-15:
            best = (cent, assign, inertia, it)
    cent, assign, inertia, it = best
    return KmeansState(cent, assign, inertia, it, restarts=restarts)


def _single_linkage_merges(dist: DistanceMatrix):
    """Full agglomeration trace: list of (distance, cluster_a, cluster_b) merges.

    Clusters are named by their lexicographically smallest member; when several
    pairs tie on distance, the pair with the smallest (name_a, name_b) merges.
    """
    dist.validate()
    tasks = dist.tasks
    clusters: list[set[str]] = [{t} for t in tasks]
    idx = {t: i for i, t in enumerate(tasks)}
    merges = []
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d_ab = min(dist.d[idx[x], idx[y]] for x in clusters[a] for y in clusters[b])
                name = tuple(sorted((min(clusters[a]), min(clusters[b]))))
                key = (d_ab, name)
                if best is None or key < best[0]:
                    best = (key, a, b)
        (d_ab, name), a, b = best
        merges.append((float(d_ab), name[0], name[1]))
        clusters[a] = clusters[a] | clusters[b]
        del clusters[b]
    return merges


def single_linkage(dist: DistanceMatrix, k: int) -> GroupingPlan:
    """Agglomerate by minimum inter-cluster distance until k clusters remain."""
    dist.validate()
    n = len(dist.tasks)
    if not 1 <= k <= n:
        raise ValidationError(f"single_linkage needs 1 <= k <= {n}, got {k}")
    clusters: list[set[str]] = [{t} for t in dist.tasks]
    idx = {t: i for i, t in enumerate(dist.tasks)}
    while len(clusters) > k:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d_ab = min(dist.d[idx[x], idx[y]] for x in clusters[a] for y in clusters[b])
                name = tuple(sorted((min(clusters[a]), min(clusters[b]))))
                key = (d_ab, name)
                if best is None or key < best[0]:
                    best = (key, a, b)
        _, a, b = best
        clusters[a] = clusters[a] | clusters[b]
        del clusters[b]
    plan = GroupingPlan(_canonical_groups(clusters), method="hierarchical", k=k)
    plan.validate(dist.tasks)
    return plan


def linkage_merges(dist: DistanceMatrix):
    """Dendrogram merge list for reporting."""
    return _single_linkage_merges(dist)


def kmeans_grouping(dist: DistanceMatrix, k: int, seed: int) -> GroupingPlan:
    """K-means on distance-matrix rows (each task's distance profile)."""
    state = kmeans(dist.d, k, seed)
    groups = [
        [t for t, a in zip(dist.tasks, state.assignments) if a == c] for c in range(k)
    ]
    groups = [g for g in groups if g]
    if len(groups) != k:
        raise ValidationError(f"k-means produced {len(groups)} non-empty clusters, wanted {k}")
    plan = GroupingPlan(_canonical_groups(groups), method="kmeans", k=k)
    plan.validate(dist.tasks)
    return plan


def consensus_group(
    bundle: gb.GradientBundle, layer: str, k: int = DEFAULT_GROUPS, seed: int = 2343
) -> GroupingPlan:
    """Run both clusterings on the same distance matrix and cross-check.

    Agreement yields method="consensus"; disagreement falls back to the
    hierarchical partition with an explicit warning.
    """
    if len(bundle.tasks) < 2:
        raise ValidationError(">= 2 tasks required for cross-task grouping")
    dist = to_distance(similarity_matrix(bundle, layer))
    hier = single_linkage(dist, k)
    km = kmeans_grouping(dist, k, seed)
    if hier.groups == km.groups:
        return GroupingPlan(hier.groups, method="consensus", k=k)
    warn = (
        "kmeans and hierarchical clustering disagree "
        f"(kmeans={[list(g) for g in km.groups]}, "
        f"hierarchical={[list(g) for g in hier.groups]}); keeping hierarchical"
    )
    return GroupingPlan(hier.groups, method="hierarchical", k=k, warnings=(warn,))
