"""Monte-Carlo laboratory for the constrained linear-regression analysis.

Covariates are uniform on the L2 ball of radius sqrt(d+2), which makes
E[x x^T] the identity. The base learner is norm-constrained least squares
(radius L < 1), solved through its KKT system by bisecting the multiplier;
the combined predictor adds the 1-nearest-neighbor residual. Risk curves
split the squared test error into an estimation part (t1), a neighbor-gap
part (t2), and report the ERM-only and pure nearest-neighbor baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from resmem import _kernels
from resmem.errors import NonPositiveMean, ShapeMismatch, SingularSystem
from resmem.parallel import ordered_map

_BISECT_MAX_ITERS = 512


@dataclass(frozen=True)
class LinearProblem:
    """Dimension, constraint radius L in (0,1), unit target direction, seed."""

    d: int
    L: float
    theta_star: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ShapeMismatch("d must be >= 1")
        if not 0.0 < self.L < 1.0:
            raise ShapeMismatch(f"L must lie strictly in (0, 1), got {self.L}")
        th = np.ascontiguousarray(self.theta_star, dtype=np.float64)
        object.__setattr__(self, "theta_star", th)
        if th.shape != (self.d,):
            raise ShapeMismatch(f"theta_star shape {th.shape} != ({self.d},)")
        if abs(np.linalg.norm(th) - 1.0) > 1e-12:
            raise ShapeMismatch("theta_star must be a unit vector")


def make_problem(d: int, L: float, seed: int = 0, random_direction: bool = False) -> LinearProblem:
    """Problem with theta_star = e1, or a seeded random unit direction.

    The risk is rotation-invariant under the ball distribution, so the fixed
    basis vector is the default; it keeps per-seed variance comparable.
    """
    if random_direction:
        g = np.random.default_rng(seed).standard_normal(d)
        theta = g / np.linalg.norm(g)
    else:
        theta = np.zeros(d)
        theta[0] = 1.0
    return LinearProblem(d=d, L=L, theta_star=theta, seed=seed)


@dataclass(frozen=True)
class ErmSolution:
    theta_n: np.ndarray
    lambda_n: float
    active: bool


@dataclass(frozen=True)
class RiskSample:
    """Mean squared errors of one trial over its test draws."""

    total: float
    t1: float
    t2: float
    erm_only: float
    pure_nn: float


@dataclass(frozen=True)
class RiskRow:
    n: int
    mean: Dict[str, float]
    se: Dict[str, float]


@dataclass(frozen=True)
class RiskTable:
    rows: List[RiskRow]


RISK_FIELDS = ("total", "t1", "t2", "erm_only", "pure_nn")


def trial_rng(seed: int, n: int, trial: int) -> np.random.Generator:
    """Counter-based substream keyed on (seed, n, trial index)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(n), int(trial)))
    return np.random.Generator(np.random.Philox(ss))


def sample_ball(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. uniform draws from the L2 ball of radius sqrt(d+2) in R^d."""
    if count < 1 or d < 1:
        raise ShapeMismatch("count and d must be >= 1")
    g = rng.standard_normal((count, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    u = rng.random(count)
    radius = np.sqrt(d + 2.0) * u ** (1.0 / d)
    return g / norms * radius[:, None]


def _theta_at(sigma_n: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    a = sigma_n + lam * np.eye(sigma_n.shape[0])
    try:
        return cho_solve(cho_factor(a), b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"covariance system singular at lambda={lam}") from exc


def solve_constrained_erm(X: np.ndarray, y: np.ndarray, L: float, tol: float = 1e-10) -> ErmSolution:
    """Least squares over the ball of radius L.

    The minimum-norm unconstrained solution is returned when feasible;
    otherwise the multiplier lambda is bisected until the stationary point
    theta(lambda) = (Sigma_n + lambda I)^{-1} X^T y / n lands on the
    constraint boundary (|theta| is strictly decreasing in lambda).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeMismatch("X must be a nonempty matrix")
    if not tol > 0.0:
        raise ShapeMismatch("tol must be positive")
    n = X.shape[0]
    sigma_n = X.T @ X / n
    b = X.T @ y / n

    theta_free = np.linalg.lstsq(X, y, rcond=None)[0]
    if np.linalg.norm(theta_free) <= L:
        return ErmSolution(theta_n=theta_free, lambda_n=0.0, active=False)

    hi = 1.0
    while np.linalg.norm(_theta_at(sigma_n, b, hi)) >= L:
        hi *= 2.0
    lo = 0.0
    lam = hi
    theta = _theta_at(sigma_n, b, lam)
    for _ in range(_BISECT_MAX_ITERS):
        lam = 0.5 * (lo + hi)
        theta = _theta_at(sigma_n, b, lam)
        gap = np.linalg.norm(theta) - L
        if abs(gap) <= tol:
            break
        if gap > 0.0:
            lo = lam
        else:
            hi = lam
    return ErmSolution(theta_n=theta, lambda_n=lam, active=True)


def nearest_index(X: np.ndarray, query: np.ndarray) -> int:
    """Row of X closest to the query in L2; ties go to the lower index."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeMismatch("X must be a nonempty matrix")
    d2 = _kernels.sqdist_to_rows(X, np.asarray(query, dtype=np.float64))
    return int(np.argmin(d2))


def predict_resmem_linear(query: np.ndarray, X: np.ndarray, y: np.ndarray, sol: ErmSolution) -> float:
    """Linear prediction plus the nearest training point's residual."""
    j = nearest_index(X, query)
    theta = sol.theta_n
    return float(query @ theta + (y[j] - X[j] @ theta))


def run_trial(
    prob: LinearProblem,
    n: int,
    m_test: int,
    rng: np.random.Generator,
    with_draws: bool = False,
):
    """One Monte-Carlo trial: fit on n draws, average errors over m_test draws.

    Per test draw: total is the combined predictor's squared error; t1 the
    squared estimation error at the test point and its neighbor; t2 the
    squared neighbor gap of the non-learnable part; erm_only and pure_nn the
    squared errors of the two one-component baselines.
    """
    if n < 1 or m_test < 1:
        raise ShapeMismatch("n and m_test must be >= 1")
    X = sample_ball(n, prob.d, rng)
    y = X @ prob.theta_star
    sol = solve_constrained_erm(X, y, prob.L)

    Xt = sample_ball(m_test, prob.d, rng)
    d2 = _kernels.sqdist_matrix(Xt, X)
    nn = np.argmin(d2, axis=1)

    theta_inf = prob.L * prob.theta_star
    f_n_t = Xt @ sol.theta_n
    f_n_nn = X[nn] @ sol.theta_n
    f_inf_t = Xt @ theta_inf
    f_inf_nn = X[nn] @ theta_inf
    f_star_t = Xt @ prob.theta_star
    y_nn = y[nn]  # equals the target function at the neighbor (noiseless labels)

    combined = f_n_t + (y_nn - f_n_nn)
    draws = {
        "total": (combined - f_star_t) ** 2,
        "t1": (f_n_t - f_inf_t) ** 2 + (f_n_nn - f_inf_nn) ** 2,
        "t2": ((f_inf_t - f_star_t) - (f_inf_nn - y_nn)) ** 2,
        "erm_only": (f_n_t - f_star_t) ** 2,
        "pure_nn": (y_nn - f_star_t) ** 2,
    }
    sample = RiskSample(**{k: float(v.mean()) for k, v in draws.items()})
    if with_draws:
        return sample, draws
    return sample


def risk_curve(
    prob: LinearProblem,
    n_grid: Sequence[int],
    trials: int,
    m_test: int,
    threads: int = 1,
) -> RiskTable:
    """Mean and standard error of every risk field over independent trials."""
    n_grid = [int(n) for n in n_grid]
    if not n_grid or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ShapeMismatch("n_grid must be nonempty and strictly ascending")
    if trials < 1:
        raise ShapeMismatch("trials must be >= 1")
    rows = []
    for n in n_grid:
        samples = ordered_map(
            lambda t, _n=n: run_trial(prob, _n, m_test, trial_rng(prob.seed, _n, t)),
            range(trials),
            threads,
        )
        mean = {}
        se = {}
        for f in RISK_FIELDS:
            vals = np.array([getattr(s, f) for s in samples])
            mean[f] = float(vals.mean())
            se[f] = float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
        rows.append(RiskRow(n=n, mean=mean, se=se))
    return RiskTable(rows=rows)


def rate_fit(table: RiskTable, field: str) -> float:
    """Least-squares slope of log(mean) against log(n)."""
    if field not in RISK_FIELDS:
        raise ShapeMismatch(f"unknown field {field!r}; choose from {RISK_FIELDS}")
    if len(table.rows) < 3:
        raise ShapeMismatch("rate fit needs at least 3 rows")
    means = np.array([row.mean[field] for row in table.rows])
    if (means <= 0.0).any():
        raise NonPositiveMean(f"field {field!r} has a non-positive mean")
    x = np.log(np.array([row.n for row in table.rows], dtype=np.float64))
    ylog = np.log(means)
    xc = x - x.mean()
    return float((xc * (ylog - ylog.mean())).sum() / (xc * xc).sum())


@dataclass(frozen=True)
class ZnnRow:
    n: int
    mean: float
    se: float
    bound: float
    ratio: float


def znn_bound(d: int, n: int) -> float:
    """d^2 (log(n^(1/d)) / n)^(1/d); zero at n = 1."""
    logterm = np.log(n) / d
    if logterm <= 0.0:
        return 0.0
    return float(d * d * (logterm / n) ** (1.0 / d))


def znn_concentration(
    d: int,
    n_grid: Sequence[int],
    trials: int,
    seed: int = 0,
    threads: int = 1,
) -> List[ZnnRow]:
    """Squared nearest-neighbor distance of a fresh draw to n ball draws.

    Each row reports the Monte-Carlo mean of Z_n, its standard error, the
    d^2 (log(n^(1/d))/n)^(1/d) envelope, and their ratio (inf at n = 1 where
    the envelope vanishes).
    """
    if trials < 1:
        raise ShapeMismatch("trials must be >= 1")

    def one(n: int, t: int) -> float:
        rng = trial_rng(seed, n, t)
        query = sample_ball(1, d, rng)[0]
        X = sample_ball(n, d, rng)
        return float(_kernels.sqdist_to_rows(X, query).min())

    rows = []
    for n in n_grid:
        n = int(n)
        if n < 1:
            raise ShapeMismatch("n must be >= 1")
        vals = np.array(ordered_map(lambda t, _n=n: one(_n, t), range(trials), threads))
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
        bound = znn_bound(d, n)
        ratio = mean / bound if bound > 0.0 else float("inf")
        rows.append(ZnnRow(n=n, mean=mean, se=se, bound=bound, ratio=ratio))
    return rows
