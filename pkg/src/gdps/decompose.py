"""Materialize a sharing plan as a decomposed, routed feed-forward block.

The unified block's equivalent map W_equiv = W2 @ W1 is SVD-factored; the
top-r symmetric factors (U_r sqrt(S_r), sqrt(S_r) V_r^T) seed the shared
branch and are padded with small seeded Gaussian noise up to the shared
width.  The rank-r reconstruction's residual is scaled by each group's
energy share p_g and SVD-factored again to seed that group's private branch.
Residuals are always taken against the noise-free rank-r reconstruction:
padding noise exists to break symmetry for later training and must not bias
the private initialization.

Forward evaluation routes each task to its group: the input goes through the
shared up-projection and the group's private up-projection, both activated,
and the two hidden blocks are projected back and summed (equivalently, a
concatenated hidden layer of width d_s + d_p with a split down-projection).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle import read_matrix_file, write_matrix_file
from .errors import ValidationError
from .grouping import GroupingPlan
from .linalg import svd

DEFAULT_NOISE_SCALE = 1e-4
DEFAULT_SEED = 2343
DEFAULT_ACTIVATION = "silu"
ACTIVATIONS = ("identity", "relu", "silu", "tanh")


def _sigmoid(a):
    # split form avoids exp overflow for large |a|
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def activation_fn(name: str):
    if name == "identity":
        return lambda a: a
    if name == "relu":
        return lambda a: np.maximum(a, 0.0)
    if name == "silu":
        return lambda a: a * _sigmoid(a)
    if name == "tanh":
        return np.tanh
    raise ValidationError(f"unknown activation {name!r}; choose from {ACTIVATIONS}")


def activation_grad(name: str):
    if name == "identity":
        return lambda a: np.ones_like(a)
    if name == "relu":
        return lambda a: (a > 0.0).astype(np.float64)
    if name == "silu":
        def dsilu(a):
            s = _sigmoid(a)
            return s * (1.0 + a * (1.0 - s))
        return dsilu
    if name == "tanh":
        return lambda a: 1.0 - np.tanh(a) ** 2
    raise ValidationError(f"unknown activation {name!r}; choose from {ACTIVATIONS}")


@dataclass(frozen=True)
class UnifiedFfnWeights:
    """The block being decomposed: up-projection w1, down-projection w2."""

    d_model: int
    d_ff: int
    w1: np.ndarray  # d_ff x d_model
    w2: np.ndarray  # d_model x d_ff

    def __post_init__(self):
        object.__setattr__(self, "w1", np.asarray(self.w1, dtype=np.float64))
        object.__setattr__(self, "w2", np.asarray(self.w2, dtype=np.float64))
        if self.w1.shape != (self.d_ff, self.d_model):
            raise ValidationError(
                f"w1 shape {self.w1.shape} != (d_ff, d_model) = ({self.d_ff}, {self.d_model})"
            )
        if self.w2.shape != (self.d_model, self.d_ff):
            raise ValidationError(
                f"w2 shape {self.w2.shape} != (d_model, d_ff) = ({self.d_model}, {self.d_ff})"
            )
        if not (np.isfinite(self.w1).all() and np.isfinite(self.w2).all()):
            raise ValidationError("unified weights contain non-finite entries")


@dataclass(frozen=True)
class DecompositionPlan:
    """Everything needed to split one FFN block: widths, energies, seeds."""

    grouping: GroupingPlan
    shared_ratio: float
    d_model: int
    d_ff: int
    d_s: int
    d_p: int
    p_g: tuple[float, ...]
    r: int
    noise_scale: float = DEFAULT_NOISE_SCALE
    seed: int = DEFAULT_SEED
    activation: str = DEFAULT_ACTIVATION

    def __post_init__(self):
        n = len(self.grouping.groups)
        if self.d_s <= 0 or self.d_p <= 0:
            raise ValidationError(f"widths must be positive: d_s={self.d_s}, d_p={self.d_p}")
        if self.d_s + n * self.d_p != self.d_ff:
            raise ValidationError(
                f"width split violated: d_s + N*d_p = {self.d_s} + {n}*{self.d_p} "
                f"!= d_ff = {self.d_ff}"
            )
        if len(self.p_g) != n:
            raise ValidationError(f"{len(self.p_g)} group energies for {n} groups")
        if abs(sum(self.p_g) - 1.0) > 1e-9 or any(p < 0 for p in self.p_g):
            raise ValidationError(f"group energies must be non-negative and sum to 1: {self.p_g}")
        if not 1 <= self.r <= min(self.d_model, self.d_s):
            raise ValidationError(
                f"truncation rank r={self.r} outside [1, min(d_model, d_s) = "
                f"{min(self.d_model, self.d_s)}]"
            )
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be >= 0")

    @property
    def n_groups(self) -> int:
        return len(self.grouping.groups)

    def to_dict(self) -> dict:
        return {
            "grouping": self.grouping.to_dict(),
            "shared_ratio": self.shared_ratio,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "d_s": self.d_s,
            "d_p": self.d_p,
            "p_g": list(self.p_g),
            "r": self.r,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecompositionPlan":
        return cls(
            grouping=GroupingPlan.from_dict(d["grouping"]),
            shared_ratio=float(d["shared_ratio"]),
            d_model=int(d["d_model"]),
            d_ff=int(d["d_ff"]),
            d_s=int(d["d_s"]),
            d_p=int(d["d_p"]),
            p_g=tuple(float(x) for x in d["p_g"]),
            r=int(d["r"]),
            noise_scale=float(d["noise_scale"]),
            seed=int(d["seed"]),
            activation=str(d["activation"]),
        )


def split_widths(d_ff: int, shared_ratio: float, n_groups: int) -> tuple[int, int]:
    """Largest feasible (d_s, d_p) with d_s <= ratio*d_ff and d_s + N*d_p = d_ff.

    d_s is rounded down until the leftover capacity divides evenly across the
    groups and d_s itself is a multiple of the group count.
    """
    if n_groups < 1:
        raise ValidationError("need at least one group")
    target = int(np.floor(shared_ratio * d_ff))
    for d_s in range(target, 0, -1):
        if d_s % n_groups == 0 and (d_ff - d_s) % n_groups == 0 and d_ff - d_s > 0:
            return d_s, (d_ff - d_s) // n_groups
    raise ValidationError(
        f"no feasible shared/private split for d_ff={d_ff}, ratio={shared_ratio}, "
        f"N={n_groups}"
    )


def make_plan(
    grouping: GroupingPlan,
    shared_ratio: float,
    d_model: int,
    d_ff: int,
    p_g,
    r: int | None = None,
    noise_scale: float = DEFAULT_NOISE_SCALE,
    seed: int = DEFAULT_SEED,
    activation: str = DEFAULT_ACTIVATION,
) -> DecompositionPlan:
    """Derive widths from the ratio and build a validated plan."""
    d_s, d_p = split_widths(d_ff, shared_ratio, len(grouping.groups))
    if r is None:
        r = max(1, min(d_s // 4, d_model, d_s))
    return DecompositionPlan(
        grouping=grouping,
        shared_ratio=shared_ratio,
        d_model=d_model,
        d_ff=d_ff,
        d_s=d_s,
        d_p=d_p,
        p_g=tuple(float(x) for x in p_g),
        r=r,
        noise_scale=noise_scale,
        seed=seed,
        activation=activation,
    )


@dataclass(frozen=True)
class SpecializedFfn:
    """Shared + per-group private branches with a task -> group routing table."""

    d_model: int
    d_s: int
    d_p: int
    shared_up: np.ndarray  # d_s x d_model
    shared_down: np.ndarray  # d_model x d_s
    private_up: tuple[np.ndarray, ...]  # each d_p x d_model
    private_down: tuple[np.ndarray, ...]  # each d_model x d_p
    routing: dict  # task -> group index
    activation: str = DEFAULT_ACTIVATION
    plan: DecompositionPlan | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.shared_up.shape != (self.d_s, self.d_model):
            raise ValidationError(f"shared_up shape {self.shared_up.shape}")
        if self.shared_down.shape != (self.d_model, self.d_s):
            raise ValidationError(f"shared_down shape {self.shared_down.shape}")
        for g, (up, down) in enumerate(zip(self.private_up, self.private_down)):
            if up.shape != (self.d_p, self.d_model):
                raise ValidationError(f"group {g} up shape {up.shape}")
            if down.shape != (self.d_model, self.d_p):
                raise ValidationError(f"group {g} down shape {down.shape}")
        n = len(self.private_up)
        for task, g in self.routing.items():
            if not 0 <= g < n:
                raise ValidationError(f"task {task!r} routed to missing group {g}")


def equiv_weight(w: UnifiedFfnWeights) -> np.ndarray:
    """Equivalent linear map of the block: w2 @ w1 (d_model x d_model)."""
    return w.w2 @ w.w1


def _pad_inner(factor_left: np.ndarray, factor_right: np.ndarray, width: int, rng, scale: float):
    """Grow the inner dimension of a (left, right) factor pair to `width`.

    New columns of the left factor and rows of the right factor are filled
    with N(0, scale^2) noise; draws happen in a fixed order so results are
    reproducible for any scale, including exactly zero.
    """
    d_left, r = factor_left.shape
    d_right = factor_right.shape[1]
    if width < r:
        raise ValidationError(f"cannot pad from {r} down to {width}")
    left = np.zeros((d_left, width))
    right = np.zeros((width, d_right))
    left[:, :r] = factor_left
    right[:r, :] = factor_right
    left[:, r:] = scale * rng.standard_normal((d_left, width - r))
    right[r:, :] = scale * rng.standard_normal((width - r, d_right))
    return left, right


def shared_factors(w_equiv: np.ndarray, plan: DecompositionPlan):
    """Rank-r symmetric SVD factors padded to width d_s, plus the rank-r map.

    Returns (w1_factor: d_model x d_s, w2_factor: d_s x d_model,
    w_shared_equiv: d_model x d_model).  w_shared_equiv excludes the noise
    padding by construction.
    """
    w_equiv = np.asarray(w_equiv, dtype=np.float64)
    if w_equiv.shape != (plan.d_model, plan.d_model):
        raise ValidationError(
            f"w_equiv shape {w_equiv.shape} != ({plan.d_model}, {plan.d_model})"
        )
    dec = svd(w_equiv)
    if plan.r > dec.sigma.size:
        raise ValidationError(f"rank {plan.r} exceeds available spectrum {dec.sigma.size}")
    trunc = dec.truncate(plan.r)
    sqrt_sigma = np.sqrt(trunc.sigma)
    left = trunc.u * sqrt_sigma  # d_model x r
    right = (sqrt_sigma[:, None]) * trunc.v.T  # r x d_model
    w_shared_equiv = left @ right
    rng = np.random.default_rng(np.random.SeedSequence(entropy=plan.seed, spawn_key=(0,)))
    w1_factor, w2_factor = _pad_inner(left, right, plan.d_s, rng, plan.noise_scale)
    return w1_factor, w2_factor, w_shared_equiv


def residual(w_equiv: np.ndarray, w_shared_equiv: np.ndarray) -> np.ndarray:
    w_equiv = np.asarray(w_equiv, dtype=np.float64)
    w_shared_equiv = np.asarray(w_shared_equiv, dtype=np.float64)
    if w_equiv.shape != w_shared_equiv.shape:
        raise ValidationError(
            f"shape mismatch: {w_equiv.shape} vs {w_shared_equiv.shape}"
        )
    return w_equiv - w_shared_equiv


def private_init(w_res: np.ndarray, plan: DecompositionPlan, t: int | None = None):
    """Energy-weighted per-group factors of the residual map.

    For each group g the residual is scaled by p_g, SVD-truncated to t
    directions (default d_p // group count), converted to symmetric sqrt
    factors, and noise-padded to width d_p.  Returns a list of
    (up: d_p x d_model, down: d_model x d_p) pairs in group order.
    """
    w_res = np.asarray(w_res, dtype=np.float64)
    n = plan.n_groups
    if t is None:
        t = max(1, min(plan.d_p // n, plan.d_model))
    if not 1 <= t <= min(plan.d_p, plan.d_model):
        raise ValidationError(f"private rank t={t} outside [1, {min(plan.d_p, plan.d_model)}]")

    zero_residual = not np.any(w_res)
    branches = []
    for g in range(n):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=plan.seed, spawn_key=(1, g))
        )
        if zero_residual:
            up = plan.noise_scale * rng.standard_normal((plan.d_p, plan.d_model))
            down = plan.noise_scale * rng.standard_normal((plan.d_model, plan.d_p))
            branches.append((up, down))
            continue
        scaled = plan.p_g[g] * w_res
        dec = svd(scaled).truncate(t)
        sqrt_sigma = np.sqrt(dec.sigma)
        left = dec.u * sqrt_sigma  # d_model x t
        right = sqrt_sigma[:, None] * dec.v.T  # t x d_model
        down, up = _pad_inner(left, right, plan.d_p, rng, plan.noise_scale)
        branches.append((up, down))
    return branches


def assemble(w: UnifiedFfnWeights, plan: DecompositionPlan, private_rank: int | None = None) -> SpecializedFfn:
    """Full pipeline: equivalent map -> shared factors -> residual -> privates."""
    if (w.d_model, w.d_ff) != (plan.d_model, plan.d_ff):
        raise ValidationError(
            f"weights are ({w.d_model}, {w.d_ff}) but plan expects "
            f"({plan.d_model}, {plan.d_ff})"
        )
    w_equiv = equiv_weight(w)
    w1_factor, w2_factor, w_shared_equiv = shared_factors(w_equiv, plan)
    w_res = residual(w_equiv, w_shared_equiv)
    branches = private_init(w_res, plan, t=private_rank)

    routing = {}
    for g, group in enumerate(plan.grouping.groups):
        for task in group:
            routing[task] = g

    return SpecializedFfn(
        d_model=plan.d_model,
        d_s=plan.d_s,
        d_p=plan.d_p,
        shared_up=w2_factor,
        shared_down=w1_factor,
        private_up=tuple(up for up, _ in branches),
        private_down=tuple(down for _, down in branches),
        routing=routing,
        activation=plan.activation,
        plan=plan,
    )


def forward(ffn: SpecializedFfn, x, task: str) -> np.ndarray:
    """Routed evaluation: concat(act(x Ws^T), act(x Wp^T)) -> split down-proj."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != ffn.d_model:
        raise ValidationError(f"input width {x.shape[1]} != d_model {ffn.d_model}")
    if not np.isfinite(x).all():
        raise ValidationError("forward input contains non-finite entries")
    if task not in ffn.routing:
        raise ValidationError(f"task {task!r} has no route; known: {sorted(ffn.routing)}")
    g = ffn.routing[task]
    act = activation_fn(ffn.activation)
    h_shared = act(x @ ffn.shared_up.T)
    h_private = act(x @ ffn.private_up[g].T)
    out = h_shared @ ffn.shared_down.T + h_private @ ffn.private_down[g].T
    return out[0] if squeeze else out


def unified_forward(w: UnifiedFfnWeights, x, activation: str = "identity") -> np.ndarray:
    """Reference forward pass of the undecomposed block."""
    x = np.asarray(x, dtype=np.float64)
    act = activation_fn(activation)
    return act(x @ w.w1.T) @ w.w2.T


FFN_META_NAME = "ffn.json"


def save_ffn(ffn: SpecializedFfn, path) -> None:
    """Directory layout: ffn.json + one .gdm file per weight matrix."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_matrix_file(root / "shared_up.gdm", ffn.shared_up)
    write_matrix_file(root / "shared_down.gdm", ffn.shared_down)
    for g in range(len(ffn.private_up)):
        write_matrix_file(root / f"group{g}_up.gdm", ffn.private_up[g])
        write_matrix_file(root / f"group{g}_down.gdm", ffn.private_down[g])
    meta = {
        "d_model": ffn.d_model,
        "d_s": ffn.d_s,
        "d_p": ffn.d_p,
        "n_groups": len(ffn.private_up),
        "routing": dict(sorted(ffn.routing.items())),
        "activation": ffn.activation,
        "plan": ffn.plan.to_dict() if ffn.plan is not None else None,
    }
    (root / FFN_META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_ffn(path) -> SpecializedFfn:
    root = Path(path)
    meta_path = root / FFN_META_NAME
    if not meta_path.is_file():
        raise ValidationError(f"no {FFN_META_NAME} in {root}")
    meta = json.loads(meta_path.read_text())
    n = int(meta["n_groups"])
    plan = meta.get("plan")
    return SpecializedFfn(
        d_model=int(meta["d_model"]),
        d_s=int(meta["d_s"]),
        d_p=int(meta["d_p"]),
        shared_up=read_matrix_file(root / "shared_up.gdm").astype(np.float64),
        shared_down=read_matrix_file(root / "shared_down.gdm").astype(np.float64),
        private_up=tuple(
            read_matrix_file(root / f"group{g}_up.gdm").astype(np.float64) for g in range(n)
        ),
        private_down=tuple(
            read_matrix_file(root / f"group{g}_down.gdm").astype(np.float64) for g in range(n)
        ),
        routing={task: int(g) for task, g in meta["routing"].items()},
        activation=str(meta["activation"]),
        plan=DecompositionPlan.from_dict(plan) if plan else None,
    )
