"""Joint gradient subspace analysis: stacked SVD, energy shares, ridge CCA.

All tasks' gradient matrices at a layer are stacked row-wise (in bundle task
order, unnormalized) and decomposed once; each task's energy is the squared
projection norm onto the top-k right singular directions, and the energy
proportions p_i decide how much residual capacity each group later receives.
Pairwise subspace alignment is measured by the leading ridge-regularized
canonical correlation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import bundle as gb
from .errors import SingularCovarianceError, ValidationError
from .grouping import GroupingPlan
from .linalg import SvdResult, covariance, gini, svd
from .parallel import ordered_map

DEFAULT_TOP_K = 10
DEFAULT_LAMBDA = 1e-3


def joint_svd(bundle: gb.GradientBundle, layer: str, normalize_rows: bool = False) -> SvdResult:
    """Thin SVD of the row-wise stack of all tasks' matrices at a layer."""
    blocks = []
    for task in bundle.tasks:
        g = gb.sample_gradients(bundle, task, layer).astype(np.float64)
        if normalize_rows:
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            g = g / norms
        blocks.append(g)
    return svd(np.vstack(blocks))


def energy_proportions(
    bundle: gb.GradientBundle,
    layer: str,
    k: int = DEFAULT_TOP_K,
    joint: SvdResult | None = None,
    normalize_rows: bool = False,
):
    """Per-task energies E_i = sum_{j<=k} ||G_i v_j||^2 and shares p_i."""
    if joint is None:
        joint = joint_svd(bundle, layer, normalize_rows=normalize_rows)
    available = joint.sigma.size
    if not 1 <= k <= available:
        raise ValidationError(f"top-k must be in [1, {available}], got {k}")
    v_k = joint.v[:, :k]
    energies = []
    for task in bundle.tasks:
        g = gb.sample_gradients(bundle, task, layer).astype(np.float64)
        if normalize_rows:
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            g = g / norms
        energies.append(float(((g @ v_k) ** 2).sum()))
    energies = np.array(energies)
    total = energies.sum()
    if total <= 0.0:
        raise ValidationError(f"all task energies are zero at layer {layer!r}")
    return energies, energies / total


def spectrum_stats(sigma, k: int | None = None) -> tuple[float, float]:
    """(top1 energy share, Gini) over squared singular values.

    With k set, only the leading k values enter; default is the full spectrum.
    """
    s = np.asarray(sigma, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValidationError("empty spectrum")
    if (np.diff(s) > 1e-12).any():
        raise ValidationError("spectrum must be non-increasing")
    if k is not None:
        if not 1 <= k <= s.size:
            raise ValidationError(f"k must be in [1, {s.size}], got {k}")
        s = s[:k]
    energies = s**2
    total = energies.sum()
    if total <= 0.0:
        raise ValidationError("all-zero spectrum")
    return float(energies[0] / total), gini(energies)


@dataclass(frozen=True)
class CcaResult:
    rho: float
    w_a: np.ndarray
    w_b: np.ndarray
    lam: float


def _inv_sqrt_psd(mat: np.ndarray, lam: float) -> np.ndarray:
    sym = 0.5 * (mat + mat.T) + lam * np.eye(mat.shape[0])
    evals, evecs = np.linalg.eigh(sym)
    floor = max(sym.shape[0] * np.abs(evals).max(), 1.0) * np.finfo(np.float64).eps
    if evals.min() <= floor and lam <= 0.0:
        raise SingularCovarianceError(
            "covariance is numerically singular at lambda=0; rerun with a positive lambda"
        )
    evals = np.maximum(evals, floor)
    return (evecs / np.sqrt(evals)) @ evecs.T


def ridge_cca(g_a, g_b, lam: float = DEFAULT_LAMBDA, center: bool = True) -> CcaResult:
    """Leading canonical correlation with ridge lam*I on both auto-covariances.

    Both sides are whitened with (Gamma + lam I)^(-1/2); the leading singular
    value of the whitened cross-covariance is rho, and the back-transformed
    singular vectors are the projection directions (unit regularized norm).
    When features outnumber samples the equivalent dual problem is solved in
    sample space instead, which changes cost but not the result.
    """
    a = np.asarray(g_a, dtype=np.float64)
    b = np.asarray(g_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValidationError("ridge_cca expects 2-D sample matrices")
    if a.shape[0] != b.shape[0]:
        raise ValidationError(f"row-count mismatch: {a.shape[0]} vs {b.shape[0]}")
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    if max(a.shape[1], b.shape[1]) > 4 * a.shape[0]:
        return _ridge_cca_dual(a, b, lam, center)
    gamma_aa = covariance(a, a, center=center)
    gamma_bb = covariance(b, b, center=center)
    gamma_ab = covariance(a, b, center=center)
    wa = _inv_sqrt_psd(gamma_aa, lam)
    wb = _inv_sqrt_psd(gamma_bb, lam)
    core = wa @ gamma_ab @ wb
    u, s, vh = np.linalg.svd(core, full_matrices=False)
    rho = float(np.clip(s[0], 0.0, 1.0))
    return CcaResult(rho=rho, w_a=wa @ u[:, 0], w_b=wb @ vh[0, :], lam=lam)


def _ridge_cca_dual(a: np.ndarray, b: np.ndarray, lam: float, center: bool) -> CcaResult:
    """Sample-space route for d >> m.

    With thin SVDs A/sqrt(m) = Ua Sa Va^T, the whitened cross-covariance has
    the same nonzero singular values as
    K = diag(sa/sqrt(sa^2+lam)) Ua^T Ub diag(sb/sqrt(sb^2+lam)), an m x m
    problem.  Requires lam > 0 (auto-covariances are singular when d > m).
    """
    m = a.shape[0]
    if center:
        if m < 2:
            raise ValidationError("centered covariance needs at least 2 rows")
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
    ua, sa, vat = np.linalg.svd(a / np.sqrt(m), full_matrices=False)
    ub, sb, vbt = np.linalg.svd(b / np.sqrt(m), full_matrices=False)
    if lam <= 0.0:
        raise SingularCovarianceError(
            "covariance is numerically singular at lambda=0 (fewer samples than "
            "features); rerun with a positive lambda"
        )
    fa = sa / np.sqrt(sa**2 + lam)
    fb = sb / np.sqrt(sb**2 + lam)
    core = (fa[:, None] * (ua.T @ ub)) * fb[None, :]
    u, s, vh = np.linalg.svd(core, full_matrices=False)
    rho = float(np.clip(s[0], 0.0, 1.0))
    w_a = vat.T @ (u[:, 0] / np.sqrt(sa**2 + lam))
    w_b = vbt.T @ (vh[0, :] / np.sqrt(sb**2 + lam))
    return CcaResult(rho=rho, w_a=w_a, w_b=w_b, lam=lam)


def group_energy(proportions, grouping: GroupingPlan, tasks) -> np.ndarray:
    """Sum per-task energy shares within each group; output follows group order."""
    tasks = list(tasks)
    p = np.asarray(proportions, dtype=np.float64)
    if p.size != len(tasks):
        raise ValidationError(f"{p.size} proportions for {len(tasks)} tasks")
    grouping.validate(tasks)
    share = {t: float(p[i]) for i, t in enumerate(tasks)}
    return np.array([sum(share[t] for t in g) for g in grouping.groups])


@dataclass(frozen=True)
class SubspaceReport:
    layer: str
    k: int
    sigma: np.ndarray
    v_k: np.ndarray
    energies: np.ndarray
    proportions: np.ndarray
    top1_share: float
    gini: float
    cca: np.ndarray
    lam: float
    tasks: tuple[str, ...]
    normalize_rows: bool = False
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "k": self.k,
            "tasks": list(self.tasks),
            "sigma": [float(x) for x in self.sigma],
            "energies": [float(x) for x in self.energies],
            "proportions": [float(x) for x in self.proportions],
            "top1_share": self.top1_share,
            "gini": self.gini,
            "cca": [[float(x) for x in row] for row in self.cca],
            "lambda": self.lam,
            "normalize_rows": self.normalize_rows,
            "warnings": list(self.warnings),
        }

    def spectrum_csv(self) -> str:
        energies = self.sigma**2
        total = energies.sum()
        lines = ["index,sigma,energy_share"]
        for i, (s, e) in enumerate(zip(self.sigma, energies)):
            lines.append(f"{i},{s!r},{e / total!r}")
        return "\n".join(lines) + "\n"


def subspace_report(
    bundle: gb.GradientBundle,
    layer: str,
    k: int = DEFAULT_TOP_K,
    lam: float = DEFAULT_LAMBDA,
    normalize_rows: bool = False,
) -> SubspaceReport:
    """Full Method-C result for one layer: spectrum, energies, pairwise CCA."""
    joint = joint_svd(bundle, layer, normalize_rows=normalize_rows)
    k_eff = min(k, joint.sigma.size)
    warnings = []
    if k_eff != k:
        warnings.append(f"top-k clipped from {k} to the spectrum size {k_eff}")
    energies, proportions = energy_proportions(
        bundle, layer, k_eff, joint=joint, normalize_rows=normalize_rows
    )
    top1, g = spectrum_stats(joint.sigma)

    tasks = bundle.tasks
    n = len(tasks)
    cca = np.eye(n)
    samples = {t: gb.sample_gradients(bundle, t, layer).astype(np.float64) for t in tasks}

    def pair_rho(pair):
        i, j = pair
        ga, gbm = samples[tasks[i]], samples[tasks[j]]
        m = min(ga.shape[0], gbm.shape[0])
        truncated = m != ga.shape[0] or m != gbm.shape[0]
        # Rows are paired by index; unequal sample counts truncate to the min.
        res = ridge_cca(ga[:m], gbm[:m], lam)
        return res.rho, truncated

    pairs = list(combinations(range(n), 2))
    rhos = ordered_map(pair_rho, pairs)
    truncated_any = False
    for (i, j), (rho, truncated) in zip(pairs, rhos):
        cca[i, j] = cca[j, i] = rho
        truncated_any = truncated_any or truncated
    if truncated_any:
        warnings.append(
            "cca pairing: unequal sample counts truncated to the smaller task "
            "(index pairing is a toolkit choice, not part of the published method)"
        )
    for i in range(n):
        g_i = samples[tasks[i]]
        try:
            cca[i, i] = ridge_cca(g_i, g_i, lam).rho
        except SingularCovarianceError:
            cca[i, i] = 1.0

    return SubspaceReport(
        layer=layer,
        k=k_eff,
        sigma=joint.sigma,
        v_k=joint.v[:, :k_eff],
        energies=energies,
        proportions=proportions,
        top1_share=top1,
        gini=g,
        cca=cca,
        lam=lam,
        tasks=tuple(tasks),
        normalize_rows=normalize_rows,
        warnings=tuple(warnings),
    )
