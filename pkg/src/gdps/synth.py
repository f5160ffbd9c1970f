"""Desk-scale synthetic multi-task problems with planted gradient conflict.

Targets are rank-one linear maps y = (v0 . x) * u_t: every task reads the
same input direction v0 but writes along its own output direction u_t.
Group base directions share an exact pairwise cosine cos(theta); task
directions jitter around their group base inside a small cone, with jitter
components kept orthogonal to every base so the planted angles survive.
This makes gradient geometry controllable enough to assert tolerances on
measured similarities.

The toy model is trunk -> probe FFN (up, activation, down) -> head, with
trunk and head frozen semi-orthogonal maps so they preserve angles; only the
probe block is analyzed, decomposed, and trained.  All gradients are closed
form, which keeps the finite-difference oracle in the test suite tight.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .bundle import GradientBundle, GradientMatrix
from .decompose import (
    UnifiedFfnWeights,
    activation_fn,
    activation_grad,
    assemble,
)
from .errors import TrainingDivergence, ValidationError
from .grouping import GroupingPlan

PROBE_LAYER = "probe"
PROBE_UP_LAYER = "probe.up"
PROBE_DOWN_LAYER = "probe.down"


def _orthonormal_columns(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if n > dim:
        raise ValidationError(f"cannot fit {n} orthonormal directions in dimension {dim}")
    q, r = np.linalg.qr(rng.standard_normal((dim, n)))
    return q * np.sign(np.diag(r))


def equiangular_directions(n: int, cos_pairwise: float, dim: int, rng) -> np.ndarray:
    """n unit vectors in R^dim with every pairwise cosine equal to cos_pairwise."""
    if n == 1:
        frame = _orthonormal_columns(dim, 1, rng)
        return frame.T
    if cos_pairwise < 0:
        if n != 2:
            raise ValidationError("negative pairwise cosine only supported for 2 directions")
        frame = _orthonormal_columns(dim, 2, rng)
        u0 = frame[:, 0]
        u1 = cos_pairwise * u0 + np.sqrt(1 - cos_pairwise**2) * frame[:, 1]
        return np.stack([u0, u1])
    if not 0 <= cos_pairwise <= 1:
        raise ValidationError(f"pairwise cosine {cos_pairwise} outside [-1, 1]")
    frame = _orthonormal_columns(dim, n + 1, rng)
    shared = frame[:, 0]
    out = np.empty((n, dim))
    for i in range(n):
        out[i] = np.sqrt(cos_pairwise) * shared + np.sqrt(1 - cos_pairwise) * frame[:, i + 1]
    return out


def _normalize_grouping(grouping, tasks) -> GroupingPlan:
    if isinstance(grouping, GroupingPlan):
        plan = GroupingPlan(grouping.groups, method="planted", k=grouping.k)
    else:
        groups = []
        for g in grouping:
            groups.append(tuple(tasks[i] if isinstance(i, (int, np.integer)) else str(i) for i in g))
        plan = GroupingPlan(tuple(tuple(sorted(g)) for g in groups), method="planted", k=len(groups))
    plan.validate(tasks)
    return plan


def _planted_directions(
    plan: GroupingPlan, tasks, theta_deg: float, spread_deg: float, dim: int, rng
) -> dict:
    n_groups = len(plan.groups)
    n_tasks = len(tasks)
    need = 1 + n_groups + n_tasks
    if dim < need:
        raise ValidationError(
            f"dimension {dim} too small for {n_groups} groups + {n_tasks} tasks "
            f"(need >= {need})"
        )
    c = float(np.cos(np.radians(theta_deg)))
    bases = equiangular_directions(n_groups, c, dim, rng)
    # Jitter directions orthogonal to every base so cross-group angles hold.
    qb = np.linalg.qr(bases.T)[0]
    raw = rng.standard_normal((dim, n_tasks))
    raw -= qb @ (qb.T @ raw)
    jitter, r = np.linalg.qr(raw)
    jitter = jitter * np.sign(np.diag(r))
    half_spread = np.radians(spread_deg) / 2.0
    out = {}
    for i, task in enumerate(tasks):
        g = plan.group_of(task)
        alpha = rng.uniform(0.0, half_spread) if half_spread > 0 else 0.0
        out[task] = np.cos(alpha) * bases[g] + np.sin(alpha) * jitter[:, i]
    return out


def planted_bundle(
    n_tasks: int,
    grouping,
    theta_deg: float,
    d: int,
    m: int,
    seed: int,
    spread_deg: float = 5.0,
    scale_jitter: float = 0.1,
    sample_noise: float = 0.0,
    layer: str = PROBE_LAYER,
    task_names=None,
) -> GradientBundle:
    """Gradient bundle whose rows are planted directions times positive scales.

    With sample_noise=0 every mean gradient is exactly proportional to its
    task direction, so measured similarities equal the planted cosines.
    """
    tasks = list(task_names) if task_names else [f"t{i}" for i in range(n_tasks)]
    if len(tasks) != n_tasks:
        raise ValidationError(f"{len(tasks)} names for {n_tasks} tasks")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    plan = _normalize_grouping(grouping, tasks)
    dirs = _planted_directions(plan, tasks, theta_deg, spread_deg, d, rng)
    matrices = []
    for task in tasks:
        scales = np.abs(1.0 + scale_jitter * rng.standard_normal(m))
        rows = scales[:, None] * dirs[task][None, :]
        rows += sample_noise * rng.standard_normal((m, d))
        matrices.append(GradientMatrix(task, layer, rows))
    return GradientBundle.from_matrices(matrices)


@dataclass(frozen=True)
class SyntheticSuite:
    """Reproducible multi-task regression problem with planted structure."""

    tasks: tuple[str, ...]
    grouping: GroupingPlan
    theta_deg: float
    d_in: int
    d_out: int
    seed: int
    noise: float
    spread_deg: float
    v0: np.ndarray = field(repr=False)
    directions: dict = field(repr=False)

    def params_dict(self) -> dict:
        """Everything needed to rebuild this suite with make_suite."""
        return {
            "tasks": list(self.tasks),
            "grouping": self.grouping.to_dict(),
            "theta": self.theta_deg,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "seed": self.seed,
            "noise": self.noise,
            "spread": self.spread_deg,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.params_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def target_map(self, task: str) -> np.ndarray:
        return np.outer(self.directions[task], self.v0)

    def sample_batch(self, task: str, size: int, rng: np.random.Generator, clean: bool = False):
        """Inputs and targets for one task; clean=True drops the target noise."""
        if task not in self.tasks:
            raise ValidationError(f"unknown task {task!r}")
        x = rng.standard_normal((size, self.d_in))
        y = (x @ self.v0)[:, None] * self.directions[task][None, :]
        if self.noise > 0 and not clean:
            y = y + self.noise * rng.standard_normal((size, self.d_out))
        return x, y


def make_suite(
    n_tasks: int,
    grouping,
    theta_deg: float,
    d_in: int = 8,
    d_out: int = 8,
    seed: int = 2343,
    noise: float = 0.05,
    spread_deg: float = 5.0,
) -> SyntheticSuite:
    """Deterministic suite; cross-group target angles are theta by construction."""
    if not 0.0 <= theta_deg <= 90.0:
        raise ValidationError(f"theta must be in [0, 90] degrees, got {theta_deg}")
    tasks = tuple(f"t{i}" for i in range(n_tasks))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
    plan = _normalize_grouping(grouping, tasks)
    dirs = _planted_directions(plan, tasks, theta_deg, spread_deg, d_out, rng)
    v0 = rng.standard_normal(d_in)
    v0 /= np.linalg.norm(v0)
    return SyntheticSuite(
        tasks=tasks,
        grouping=plan,
        theta_deg=theta_deg,
        d_in=d_in,
        d_out=d_out,
        seed=seed,
        noise=noise,
        spread_deg=spread_deg,
        v0=v0,
        directions=dirs,
    )


@dataclass
class ToyModel:
    """trunk -> probe FFN -> head; only the probe block is trainable."""

    trunk: np.ndarray  # d_model x d_in, frozen, orthonormal columns
    head: np.ndarray  # d_out x d_model, frozen, orthonormal rows
    probe: UnifiedFfnWeights
    activation: str = "silu"

    @property
    def d_model(self) -> int:
        return self.probe.d_model

    @property
    def d_ff(self) -> int:
        return self.probe.d_ff

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = np.asarray(x, dtype=np.float64) @ self.trunk.T
        act = activation_fn(self.activation)
        h = act(z @ self.probe.w1.T)
        p = h @ self.probe.w2.T
        return p @ self.head.T


def make_model(
    suite: SyntheticSuite,
    d_model: int = 16,
    d_ff: int = 32,
    seed: int = 2343,
    init_scale: float = 0.3,
    activation: str = "silu",
) -> ToyModel:
    if d_model < max(suite.d_in, suite.d_out):
        raise ValidationError(
            f"d_model={d_model} must be >= max(d_in, d_out) = "
            f"{max(suite.d_in, suite.d_out)} for angle-preserving trunk/head"
        )
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(13,)))
    trunk = _orthonormal_columns(d_model, suite.d_in, rng)  # d_model x d_in
    head = _orthonormal_columns(d_model, suite.d_out, rng).T  # d_out x d_model
    w1 = init_scale / np.sqrt(d_model) * rng.standard_normal((d_ff, d_model))
    w2 = init_scale / np.sqrt(d_ff) * rng.standard_normal((d_model, d_ff))
    probe = UnifiedFfnWeights(d_model=d_model, d_ff=d_ff, w1=w1, w2=w2)
    return ToyModel(trunk=trunk, head=head, probe=probe, activation=activation)


def _per_sample_probe_grads(model: ToyModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Closed-form per-sample gradients of 1/2 ||err||^2 w.r.t. (w1, w2).

    Returns one flattened row [vec(grad w1); vec(grad w2)] per sample.
    """
    act = activation_fn(model.activation)
    dact = activation_grad(model.activation)
    z = x @ model.trunk.T  # B x d_model
    a = z @ model.probe.w1.T  # B x d_ff
    h = act(a)
    p = h @ model.probe.w2.T  # B x d_model
    e = p @ model.head.T - y  # B x d_out
    dp = e @ model.head  # B x d_model
    g_w2 = np.einsum("bi,bj->bij", dp, h)  # B x d_model x d_ff
    da = (dp @ model.probe.w2) * dact(a)  # B x d_ff
    g_w1 = np.einsum("bi,bj->bij", da, z)  # B x d_ff x d_model
    b = x.shape[0]
    return np.concatenate([g_w1.reshape(b, -1), g_w2.reshape(b, -1)], axis=1)


def analytic_gradients(
    model: ToyModel, suite: SyntheticSuite, task: str, n_samples: int, seed: int = 2343
) -> GradientMatrix:
    """Per-sample probe-block gradients for one task as a GradientMatrix."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(17,)))
    x, y = suite.sample_batch(task, n_samples, rng)
    rows = _per_sample_probe_grads(model, x, y)
    return GradientMatrix(task, PROBE_LAYER, rows)


def collect_bundle(
    model: ToyModel,
    suite: SyntheticSuite,
    layers=(PROBE_LAYER,),
    n_samples: int = 32,
    seed: int = 2343,
) -> GradientBundle:
    """Gradient bundle over the probe block, ready for the analysis modules.

    Layer ids: "probe" is the full flattened block; "probe.up"/"probe.down"
    slice the up- and down-projection gradients for layer-ranking runs.
    """
    up_len = model.d_ff * model.d_model
    known = {PROBE_LAYER, PROBE_UP_LAYER, PROBE_DOWN_LAYER}
    bad = set(layers) - known
    if bad:
        raise ValidationError(f"unknown layers {sorted(bad)}; available: {sorted(known)}")
    matrices = []
    for i, task in enumerate(suite.tasks):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(19, i)))
        x, y = suite.sample_batch(task, n_samples, rng)
        rows = _per_sample_probe_grads(model, x, y)
        for layer in layers:
            if layer == PROBE_LAYER:
                data = rows
            elif layer == PROBE_UP_LAYER:
                data = rows[:, :up_len]
            else:
                data = rows[:, up_len:]
            matrices.append(GradientMatrix(task, layer, data))
    return GradientBundle.from_matrices(matrices)


@dataclass
class TrainLog:
    """Per-step, per-task losses plus before/after gradient-alignment stats."""

    mode: str
    seed: int
    tasks: tuple[str, ...]
    losses: np.ndarray  # steps x tasks
    final_losses: np.ndarray
    xtask_cosine_before: dict
    xtask_cosine_after: dict
    suite_fingerprint: str
    suite_params: dict
    steps: int
    lr: float

    def final_mean_loss(self) -> float:
        return float(self.final_losses.mean())

    def to_csv(self) -> str:
        lines = ["step,task,loss"]
        for step in range(self.losses.shape[0]):
            for j, task in enumerate(self.tasks):
                lines.append(f"{step},{task},{self.losses[step, j]!r}")
        return "\n".join(lines) + "\n"

    def summary_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "steps": self.steps,
            "lr": self.lr,
            "suite_fingerprint": self.suite_fingerprint,
            "suite_params": self.suite_params,
            "final_losses": {t: float(v) for t, v in zip(self.tasks, self.final_losses)},
            "final_mean_loss": self.final_mean_loss(),
            "xtask_cosine_before": {t: float(v) for t, v in self.xtask_cosine_before.items()},
            "xtask_cosine_after": {t: float(v) for t, v in self.xtask_cosine_after.items()},
        }


def _batch_probe_grads(model_like, x, y):
    """Mean-over-batch loss and gradients for a unified probe block."""
    trunk, head, w1, w2, act_name = model_like
    act = activation_fn(act_name)
    dact = activation_grad(act_name)
    b = x.shape[0]
    z = x @ trunk.T
    a = z @ w1.T
    h = act(a)
    p = h @ w2.T
    e = p @ head.T - y
    loss = float((e**2).sum() / (2 * b))
    dp = (e @ head) / b
    g_w2 = dp.T @ h
    da = (dp @ w2) * dact(a)
    g_w1 = da.T @ z
    return loss, g_w1, g_w2


def _batch_specialized_grads(trunk, head, ffn_state, group: int, act_name: str, x, y):
    """Mean-over-batch loss and branch gradients for a specialized block."""
    shared_up, shared_down, private_up, private_down = ffn_state
    act = activation_fn(act_name)
    dact = activation_grad(act_name)
    b = x.shape[0]
    z = x @ trunk.T
    a_s = z @ shared_up.T
    h_s = act(a_s)
    a_p = z @ private_up[group].T
    h_p = act(a_p)
    p = h_s @ shared_down.T + h_p @ private_down[group].T
    e = p @ head.T - y
    loss = float((e**2).sum() / (2 * b))
    dp = (e @ head) / b
    g_sd = dp.T @ h_s
    g_pd = dp.T @ h_p
    da_s = (dp @ shared_down) * dact(a_s)
    g_su = da_s.T @ z
    da_p = (dp @ private_down[group]) * dact(a_p)
    g_pu = da_p.T @ z
    return loss, g_su, g_sd, g_pu, g_pd


def _xtask_cosines(task_grads: dict) -> dict:
    """Per-task mean cosine against every other task's mean gradient."""
    tasks = list(task_grads)
    out = {}
    for t in tasks:
        others = [o for o in tasks if o != t]
        cs = []
        for o in others:
            u, v = task_grads[t], task_grads[o]
            nu, nv = np.linalg.norm(u), np.linalg.norm(v)
            cs.append(float(u @ v / (nu * nv)) if nu > 0 and nv > 0 else 0.0)
        out[t] = float(np.mean(cs)) if cs else 0.0
    return out


EVAL_BATCH = 256
DIVERGENCE_GUARD = 1e6


def train(
    model: ToyModel,
    suite: SyntheticSuite,
    mode: str,
    plan=None,
    steps: int = 500,
    lr: float = 0.05,
    batch_size: int = 32,
    seed: int = 2343,
    private_lr_scale: float = 1.0,
) -> TrainLog:
    """Full-batch gradient descent on the probe block only (trunk/head frozen).

    Each task gets one fixed training batch of `batch_size` samples drawn up
    front, so the loss series is deterministic and constant at lr=0.

    unified: one probe block, updated with the mean of all tasks' gradients.
    specialized: requires a plan; the shared branch moves by the mean of the
    per-group mean gradients, each private branch only by its own group's
    mean gradient (times private_lr_scale).

    Alignment stats (xtask_cosine_*) are measured on the parameters every
    task updates (whole probe for unified, shared branch for specialized)
    against noise-free targets: sampled target noise would swamp the
    systematic alignment signal near convergence.
    """
    if mode not in ("unified", "specialized"):
        raise ValidationError(f"mode must be unified|specialized, got {mode!r}")
    if mode == "specialized" and plan is None:
        raise ValidationError("specialized mode requires a decomposition plan")
    if mode == "unified" and plan is not None:
        raise ValidationError("unified mode does not accept a plan")

    tasks = suite.tasks
    batch_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(23,)))
    eval_rng_seed = np.random.SeedSequence(entropy=seed, spawn_key=(29,))
    batches = {t: suite.sample_batch(t, batch_size, batch_rng) for t in tasks}

    losses = np.zeros((max(steps, 1), len(tasks)))

    if mode == "unified":
        w1 = model.probe.w1.copy()
        w2 = model.probe.w2.copy()

        def eval_xtask():
            rng = np.random.default_rng(eval_rng_seed)
            grads = {}
            for task in tasks:
                x, y = suite.sample_batch(task, EVAL_BATCH, rng, clean=True)
                _, g1, g2 = _batch_probe_grads(
                    (model.trunk, model.head, w1, w2, model.activation), x, y
                )
                grads[task] = np.concatenate([g1.ravel(), g2.ravel()])
            return _xtask_cosines(grads)

        def run_step(step: int, update: bool):
            nonlocal w1, w2
            g1_acc = np.zeros_like(w1)
            g2_acc = np.zeros_like(w2)
            for j, task in enumerate(tasks):
                x, y = batches[task]
                loss, g1, g2 = _batch_probe_grads(
                    (model.trunk, model.head, w1, w2, model.activation), x, y
                )
                if not np.isfinite(loss) or loss > DIVERGENCE_GUARD:
                    raise TrainingDivergence(
                        f"unified run diverged at step {step}, task {task}: loss={loss}"
                    )
                losses[step, j] = loss
                g1_acc += g1
                g2_acc += g2
            if update:
                w1 -= lr * g1_acc / len(tasks)
                w2 -= lr * g2_acc / len(tasks)

        before = eval_xtask()
        if steps == 0:
            run_step(0, update=False)
        for step in range(steps):
            run_step(step, update=True)
        after = eval_xtask()
    else:
        ffn = assemble(model.probe, plan)
        shared_up = ffn.shared_up.copy()
        shared_down = ffn.shared_down.copy()
        private_up = [u.copy() for u in ffn.private_up]
        private_down = [d.copy() for d in ffn.private_down]
        routing = ffn.routing
        act_name = ffn.activation
        groups = plan.grouping.groups

        def eval_xtask():
            rng = np.random.default_rng(eval_rng_seed)
            grads = {}
            for task in tasks:
                x, y = suite.sample_batch(task, EVAL_BATCH, rng, clean=True)
                _, g_su, g_sd, _, _ = _batch_specialized_grads(
                    model.trunk,
                    model.head,
                    (shared_up, shared_down, private_up, private_down),
                    routing[task],
                    act_name,
                    x,
                    y,
                )
                grads[task] = np.concatenate([g_su.ravel(), g_sd.ravel()])
            return _xtask_cosines(grads)

        def run_step(step: int, update: bool):
            nonlocal shared_up, shared_down
            per_task = {}
            for j, task in enumerate(tasks):
                x, y = batches[task]
                loss, g_su, g_sd, g_pu, g_pd = _batch_specialized_grads(
                    model.trunk,
                    model.head,
                    (shared_up, shared_down, private_up, private_down),
                    routing[task],
                    act_name,
                    x,
                    y,
                )
                if not np.isfinite(loss) or loss > DIVERGENCE_GUARD:
                    raise TrainingDivergence(
                        f"specialized run diverged at step {step}, task {task}: loss={loss}"
                    )
                losses[step, j] = loss
                per_task[task] = (g_su, g_sd, g_pu, g_pd)
            if not update:
                return
            su_groups = []
            sd_groups = []
            for g, group in enumerate(groups):
                su_groups.append(np.mean([per_task[t][0] for t in group], axis=0))
                sd_groups.append(np.mean([per_task[t][1] for t in group], axis=0))
                pu_g = np.mean([per_task[t][2] for t in group], axis=0)
                pd_g = np.mean([per_task[t][3] for t in group], axis=0)
                private_up[g] = private_up[g] - lr * private_lr_scale * pu_g
                private_down[g] = private_down[g] - lr * private_lr_scale * pd_g
            shared_up -= lr * np.mean(su_groups, axis=0)
            shared_down -= lr * np.mean(sd_groups, axis=0)

        before = eval_xtask()
        if steps == 0:
            run_step(0, update=False)
        for step in range(steps):
            run_step(step, update=True)
        after = eval_xtask()

    return TrainLog(
        mode=mode,
        seed=seed,
        tasks=tasks,
        losses=losses,
        final_losses=losses[-1].copy(),
        xtask_cosine_before=before,
        xtask_cosine_after=after,
        suite_fingerprint=suite.fingerprint(),
        suite_params=suite.params_dict(),
        steps=steps,
        lr=lr,
    )


def similarity_delta(log_a: TrainLog, log_b: TrainLog) -> dict:
    """Per-task change in final cross-task gradient cosine, specialized - unified.

    Argument order is irrelevant when the two logs have different modes; with
    equal modes, the difference is log_a - log_b.
    """
    if log_a.suite_fingerprint != log_b.suite_fingerprint:
        raise ValidationError("train logs come from different suites")
    if log_a.tasks != log_b.tasks:
        raise ValidationError("train logs disagree on task lists")
    if log_a.mode != log_b.mode:
        spec = log_a if log_a.mode == "specialized" else log_b
        uni = log_b if spec is log_a else log_a
    else:
        spec, uni = log_a, log_b
    return {
        t: spec.xtask_cosine_after[t] - uni.xtask_cosine_after[t] for t in log_a.tasks
    }
