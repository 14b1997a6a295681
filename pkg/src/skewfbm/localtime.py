"""Gaussian-mollifier smoothed local times along sampled paths.

The smoothed local time of a path at level x with bandwidth eps is the
running time integral of the Gaussian kernel phi_eps(B_s - x).  The
bandwidth ladder eps_k = 2^-k realises the vanishing-bandwidth limit at
desk scale; mean-square gaps between neighbouring rungs measure the
Cauchy property directly on coupled paths.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

from .fbm import FbmSpec, covariance, min_slnd_ratio, simulate_batch
from .harness import map_reduce_paths, register_study
from .stats import estimate_mean, ks_2samp

__all__ = [
    "MollifierSpec",
    "LocalTimeEstimate",
    "DEFAULT_LADDER",
    "mollifier_eval",
    "mollifier_grad",
    "smoothed_local_time",
    "local_time_batch",
    "local_time_cauchy_study",
    "moment_bound_rhs",
    "self_similarity_test",
    "mean_local_time_exact_1d",
    "mean_box_occupation_exact_1d",
]

#: geometric bandwidth ladder 2^-1 .. 2^-8; log-uniform spacing makes the
#: Cauchy gap plots read off a straight axis
DEFAULT_LADDER = tuple(2.0**-k for k in range(1, 9))


@dataclass(frozen=True)
class MollifierSpec:
    """Gaussian kernel bandwidth eps > 0 and centre x in R^d."""

    epsilon: float
    center: tuple = (0.0,)

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("mollifier bandwidth must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)


@dataclass(frozen=True)
class LocalTimeEstimate:
    """Running smoothed local time on a grid; nonnegative, nondecreasing."""

    grid: np.ndarray
    values: np.ndarray
    spec: MollifierSpec
    provenance: dict = field(default_factory=dict)


def mollifier_eval(spec: MollifierSpec, y) -> np.ndarray | float:
    """Gaussian kernel value eps^{-d/2} (2 pi)^{-d/2} exp(-|y-x|^2 / (2 eps))."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x = np.asarray(spec.center)
    d = spec.d
    q = np.sum((y - x) ** 2, axis=-1)
    out = (2.0 * pi * spec.epsilon) ** (-d / 2.0) * np.exp(-q / (2.0 * spec.epsilon))
    return float(out[0]) if out.size == 1 else out


def mollifier_grad(spec: MollifierSpec, y) -> np.ndarray:
    """Gradient of the kernel: -phi_eps(y) (y - x) / eps."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(spec.center)
    phi = mollifier_eval(spec, y)
    return -np.atleast_1d(phi)[..., None] * (y - x) / spec.epsilon


def local_time_batch(values: np.ndarray, grid: np.ndarray, spec: MollifierSpec):
    """Running trapezoid integral of phi_eps(B_s - x) for a batch of paths.

    values: (N, n+1, d); returns (N, n+1).  The integrand is smooth for
    a fixed bandwidth, so the trapezoid rule is the right tool.
    """
    phi = mollifier_eval(spec, values.reshape(-1, values.shape[-1])).reshape(
        values.shape[:2]
    )
    dt = np.diff(grid)
    inc = 0.5 * (phi[:, 1:] + phi[:, :-1]) * dt
    out = np.zeros(values.shape[:2])
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def smoothed_local_time(path, spec: MollifierSpec) -> LocalTimeEstimate:
    vals = local_time_batch(path.values[None], path.grid, spec)[0]
    return LocalTimeEstimate(path.grid, vals, spec)


def _require_subcritical(H: float, d: int) -> None:
    if H * d >= 1.0:
        warnings.warn(
            f"Hd = {H * d:.3f} >= 1: the vanishing-bandwidth limit does not "
            "exist there; results are bandwidth diagnostics only"
        )


def local_time_cauchy_study(
    spec: FbmSpec,
    x=None,
    ladder=DEFAULT_LADDER,
    n_paths: int = 5000,
    seed: int = 0,
    workers: int = 1,
):
    """Mean-square gaps E|L(eps_k) - L(eps_{k+1})|^2 on coupled paths.

    Returns (rungs, gaps) where rungs[k] estimates E[L_T(eps_k)] and
    gaps[k] the squared gap to the next rung, both as EstimatorResult.
    """
    _require_subcritical(spec.H, spec.d)
    x = tuple([0.0] * spec.d) if x is None else tuple(x)
    specs = [MollifierSpec(e, x) for e in ladder]

    def chunk_fn(idx):
        vals = simulate_batch(spec, seed, idx, method="volterra")
        finals = np.stack(
            [local_time_batch(vals, spec.grid, s)[:, -1] for s in specs]
        )
        return finals  # (len(ladder), chunk)

    finals = map_reduce_paths(
        chunk_fn, n_paths, workers, reducer=lambda ps: np.concatenate(ps, axis=1)
    )
    rungs = [estimate_mean(finals[k]) for k in range(len(ladder))]
    gaps = [
        estimate_mean((finals[k] - finals[k + 1]) ** 2)
        for k in range(len(ladder) - 1)
    ]
    return rungs, gaps


def moment_bound_rhs(H: float, d: int, t: float, m: int, K: float) -> float:
    """Closed-form ceiling for the m-th local-time moment at level x.

    m! (2 pi)^{-dm/2} K^{d(1-m)/2} prod_{j=1..m} B(j(1-Hd), 1-Hd) t^{m(1-Hd)}.
    K is the conditional-variance floor; callers pass the empirically
    calibrated value, it is never assumed.
    """
    if H * d >= 1.0:
        raise ValueError("moment bound requires Hd < 1")
    if m < 1:
        raise ValueError("moment order m must be >= 1")
    if K <= 0.0:
        raise ValueError("conditional-variance floor K must be positive")
    a = 1.0 - H * d
    prod = 1.0
    for j in range(1, m + 1):
        prod *= gamma(j * a) * gamma(a) / gamma((j + 1) * a)
    return (
        math.factorial(m)
        / (2.0 * pi) ** (d * m / 2.0)
        * K ** (d * (1.0 - m) / 2.0)
        * prod
        * t ** (m * a)
    )


def mean_local_time_exact_1d(H: float, t: float, eps: float, n: int = 20000) -> float:
    """Exact E[L_t^0(eps)] for d = 1: integral of the N(0, s^2H + eps) density at 0."""
    s = (np.arange(n) + 0.5) * (t / n)
    return float(np.sum((2.0 * pi * (s ** (2 * H) + eps)) ** -0.5) * (t / n))


def mean_box_occupation_exact_1d(H: float, t: float, h: float, n: int = 20000) -> float:
    """Exact mean of the box occupation-density estimator at level 0, d = 1."""
    from scipy.special import erf

    s = (np.arange(n) + 0.5) * (t / n)
    return float(np.sum(erf(h / (np.sqrt(2.0) * s**H)) / (2.0 * h)) * (t / n))


def self_similarity_test(
    spec: FbmSpec,
    t: float,
    n_paths: int = 5000,
    epsilon: float = 2.0**-8,
    seed: int = 0,
    workers: int = 1,
    t_grid=None,
):
    """Scaling-law check for the local time at zero.

    Two independent arms: L_t(eps) against t^(1-Hd) L_1(eps t^{-2H}).
    Matching the bandwidths this way makes the two laws equal exactly at
    finite eps, so the KS p-value is honest.  Also regresses
    log E[L_t(eps)] on log t over t_grid; the slope estimates 1 - Hd.
    """
    _require_subcritical(spec.H, spec.d)
    if not 0.0 < t <= spec.T:
        raise ValueError("need 0 < t <= T")
    if n_paths < 50:
        raise ValueError("insufficient sample size for a distributional test")
    H, d = spec.H, spec.d
    x0 = tuple([0.0] * d)
    spec_t = FbmSpec(H, d, t, max(2, int(round(spec.n * t / spec.T))))
    spec_1 = FbmSpec(H, d, 1.0, spec.n)

    def arm_a(idx):
        vals = simulate_batch(spec_t, seed, idx, method="volterra")
        return local_time_batch(vals, spec_t.grid, MollifierSpec(epsilon, x0))[:, -1]

    def arm_b(idx):
        vals = simulate_batch(spec_1, seed, idx + n_paths, method="volterra")
        lt = local_time_batch(
            vals, spec_1.grid, MollifierSpec(epsilon * t ** (-2.0 * H), x0)
        )[:, -1]
        return t ** (1.0 - H * d) * lt

    a = map_reduce_paths(arm_a, n_paths, workers)
    b = map_reduce_paths(arm_b, n_paths, workers)
    stat, pval = ks_2samp(a, b)

    # exponent regression on one running integral per path
    t_grid = np.linspace(0.3, 1.0, 8) * spec.T if t_grid is None else np.asarray(t_grid)
    node_idx = np.round(t_grid / spec.T * spec.n).astype(int)

    def running(idx):
        vals = simulate_batch(spec_1, seed, idx + 2 * n_paths, method="volterra")
        lt = local_time_batch(vals, spec_1.grid, MollifierSpec(epsilon, x0))
        return lt[:, node_idx]

    samples = map_reduce_paths(running, n_paths, workers)
    means = samples.mean(axis=0)
    slope, intercept = np.polyfit(np.log(t_grid), np.log(means), 1)
    return {
        "ks_stat": stat,
        "ks_pvalue": pval,
        "slope": float(slope),
        "slope_target": 1.0 - H * d,
        "t_grid": t_grid,
        "means": means,
        "arm_t": a,
        "arm_scaled": b,
    }


@register_study("localtime-ladder")
def _study_ladder(params, N, seed, workers):
    spec = FbmSpec(params["H"], params["d"], params.get("T", 1.0), params.get("n", 1024))
    ladder = tuple(params.get("ladder", DEFAULT_LADDER))
    rungs, gaps = local_time_cauchy_study(
        spec, ladder=ladder, n_paths=N, seed=seed, workers=workers
    )
    rung_rows = [(ladder[k], r.mean, r.se, r.n) for k, r in enumerate(rungs)]
    gap_rows = [
        (ladder[k], ladder[k + 1], g.mean, g.se, g.n) for k, g in enumerate(gaps)
    ]
    return {
        "rungs": (["epsilon", "mean", "se", "n"], rung_rows),
        "gaps": (["epsilon_k", "epsilon_k1", "sq_gap_mean", "sq_gap_se", "n"], gap_rows),
    }


@register_study("localtime-selfsim")
def _study_selfsim(params, N, seed, workers):
    spec = FbmSpec(params["H"], params["d"], params.get("T", 1.0), params.get("n", 1024))
    rep = self_similarity_test(
        spec,
        params.get("t", 0.5),
        n_paths=N,
        epsilon=params.get("epsilon", 2.0**-8),
        seed=seed,
        workers=workers,
    )
    ks_rows = [(rep["ks_stat"], rep["ks_pvalue"], rep["slope"], rep["slope_target"])]
    reg_rows = list(zip(rep["t_grid"], rep["means"]))
    return {
        "ks": (["ks_stat", "ks_pvalue", "slope", "slope_target"], ks_rows),
        "regression": (["t", "mean_local_time"], reg_rows),
    }


@register_study("localtime-moments")
def _study_moments(params, N, seed, workers):
    spec = FbmSpec(params["H"], params["d"], params.get("T", 1.0), params.get("n", 1024))
    _require_subcritical(spec.H, spec.d)
    eps = params.get("epsilon", 2.0**-8)
    x0 = tuple([0.0] * spec.d)
    K_emp = params.get("K") or min_slnd_ratio(FbmSpec(spec.H, 1, spec.T, min(spec.n, 256)))

    def chunk_fn(idx):
        vals = simulate_batch(spec, seed, idx, method="volterra")
        return local_time_batch(vals, spec.grid, MollifierSpec(eps, x0))[:, -1]

    finals = map_reduce_paths(chunk_fn, N, workers)
    rows = []
    for m in (1, 2, 3):
        est = estimate_mean(finals**m)
        rhs = moment_bound_rhs(spec.H, spec.d, spec.T, m, K_emp)
        rows.append((m, est.mean, est.se, rhs, K_emp, est.mean <= rhs))
    return {
        "moments": (
            ["m", "empirical", "se", "bound_rhs", "K_calibrated", "within_bound"],
            rows,
        )
    }
