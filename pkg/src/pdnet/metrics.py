"""Evaluation metrics and numeric theory-bound monitors.

Implements the relative-error and constraint-violation metrics used to
judge runs, the convergence-rate constant and bound monitors, the
multiplier/subgradient/consensus bound envelopes checked by the
verification suites, and the stepsize product-sum and window-sum
inequalities as predicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problems import ProblemSpec, ReferenceSolution

#: Normalizers smaller than this are treated as degenerate.
DEGENERATE_NORMALIZER = 1e-14


class MetricError(ValueError):
    """Metric undefined for the supplied states (degenerate or empty)."""


@dataclass(frozen=True)
class IterationRecord:
    """Metrics sampled at one iteration.

    ``eps`` is the maximum relative objective error over agents and
    ``delta`` the maximum relative constraint norm; both are normalized by
    their value at the initial averages, so eps = 1 exactly at t = 0.
    ``violation_sq`` is the squared positive part of the network-average
    constraint vector. ``eps_absolute`` flags records where a degenerate
    normalizer forced the absolute gap to be reported instead.
    """

    t: int
    eps: float
    delta: float
    max_lambda_norm: float
    consensus_diameter: float
    thm2_bound: float
    violation_sq: float
    max_gap: float
    sum_lambda_sq: float
    max_grad_x_norm: float
    max_grad_lambda_excess: float
    eps_absolute: bool = False


CSV_COLUMNS = (
    "t", "eps_G", "delta_G", "max_lambda_norm", "consensus_diameter",
    "bound_margin_thm2", "violation_sq", "max_gap", "sum_lambda_sq",
    "max_grad_x_norm", "max_grad_lambda_excess", "eps_absolute",
)


def record_csv_row(r: IterationRecord) -> str:
    margin = r.thm2_bound - r.max_gap
    vals = (r.t, r.eps, r.delta, r.max_lambda_norm, r.consensus_diameter,
            margin, r.violation_sq, r.max_gap, r.sum_lambda_sq,
            r.max_grad_x_norm, r.max_grad_lambda_excess, int(r.eps_absolute))
    return ",".join(repr(v) if isinstance(v, float) else str(v) for v in vals)


# ---------------------------------------------------------------------------
# run metrics
# ---------------------------------------------------------------------------

def _require_outputs(states) -> np.ndarray:
    if states.weight_sum <= 0.0:
        raise MetricError("running averages undefined (weight sum is zero)")
    return states.averages()


def epsilon_G(p: ProblemSpec, ref: ReferenceSolution, states,
              initial_states) -> float:
    """Maximum relative objective error over the network.

    max_i |(f(xhat_i) - f*) / (f(xhat_i(0)) - f*)| where f is the
    cumulative objective. Raises when an average is undefined or an
    initial gap falls below the degenerate-normalizer threshold.
    """
    outputs = _require_outputs(states)
    initial = _require_outputs(initial_states)
    gaps = p.mean_objective_many(outputs) - ref.f_star
    gaps0 = p.mean_objective_many(initial) - ref.f_star
    if np.min(np.abs(gaps0)) < DEGENERATE_NORMALIZER:
        raise MetricError("initial objective gap is degenerate")
    return float(np.max(np.abs(gaps / gaps0)))


def delta_G(p: ProblemSpec, states, initial_states) -> float:
    """Maximum relative constraint norm, max_i ||g(xhat_i)|| / ||g(xhat_i(0))||.

    Uses the full constraint-vector norm (not its positive part), so a
    strictly feasible trajectory keeps delta bounded away from zero.
    """
    outputs = _require_outputs(states)
    initial = _require_outputs(initial_states)
    norms = np.linalg.norm(p.constraint_values_many(outputs), axis=1)
    norms0 = np.linalg.norm(p.constraint_values_many(initial), axis=1)
    if np.min(norms0) < DEGENERATE_NORMALIZER:
        raise MetricError("initial constraint norm is zero")
    return float(np.max(norms / norms0))


def violation_functional(p: ProblemSpec, states) -> float:
    """|| [ (1/n) sum_i g(xhat_i) ]_+ ||^2, the violation bound's subject."""
    outputs = _require_outputs(states)
    mean_g = p.constraint_values_many(outputs).mean(axis=0)
    return float(np.sum(np.maximum(mean_g, 0.0) ** 2))


# ---------------------------------------------------------------------------
# theory constants and bound envelopes
# ---------------------------------------------------------------------------

def _constant_c(m: int, lip: float, radius: float, sigma2: float, eta: float,
                horizon: int, n: int) -> float:
    if horizon < 2:
        raise MetricError("the rate constant is defined for horizons >= 2")
    if sigma2 >= 1.0:
        raise MetricError("sigma2 must be below 1 (connected mixing matrix)")
    log_term = math.log(horizon * math.sqrt(n * horizon)) / (1.0 - sigma2)
    amp = 1.0 + n * m ** 1.5 * lip * radius / eta
    return (1.0 + 2.5 * m * lip ** 2 * radius ** 2
            + 20.0 * lip ** 2 * amp ** 2 * log_term ** 1.5)


def thm2_constant(p: ProblemSpec, w, eta: float, horizon: int, n: int) -> float:
    """The convergence-rate constant C of the deterministic rate bound."""
    return _constant_c(p.n_constraints, p.lipschitz, p.radius, w.sigma2,
                       eta, horizon, n)


def rate_bound(p: ProblemSpec, w, eta: float, horizon: int, n: int) -> float:
    """R C log(T) / (sqrt(T) - 1), the deterministic gap bound at T >= 2."""
    c = thm2_constant(p, w, eta, horizon, n)
    return p.radius * c * math.log(horizon) / (math.sqrt(horizon) - 1.0)


def stochastic_rate_bound(p: ProblemSpec, w, eta: float, horizon: int,
                             n: int) -> float:
    """Single-seed stochastic gap bound holding with probability 1 - 1/T."""
    c = thm2_constant(p, w, eta, horizon, n)
    extra = 4.0 * math.sqrt(10.0) * n * p.n_constraints ** 2 \
        * p.lipschitz ** 2 * p.radius ** 3 / eta
    return (p.radius * c + extra) * math.log(horizon) / (math.sqrt(horizon) - 1.0)


def lambda_norm_bound(p: ProblemSpec, eta: float, n: int) -> float:
    """Envelope for sum_i ||lam_i(t)||^2 under eta * alpha(t) <= 1."""
    return n * p.n_constraints * p.lipschitz ** 2 * p.radius ** 2 / eta ** 2


def grad_x_norm_bound(p: ProblemSpec, eta: float, n: int) -> float:
    """Envelope for the primal subgradient norm, L (1 + n m^{3/2} L R / eta)."""
    return p.lipschitz * (1.0 + n * p.n_constraints ** 1.5
                          * p.lipschitz * p.radius / eta)


def grad_lambda_excess_bound(p: ProblemSpec) -> float:
    """Envelope for ||grad_lam||^2 - 2 eta^2 ||lam||^2, namely 2 m L^2 R^2."""
    return 2.0 * p.n_constraints * p.lipschitz ** 2 * p.radius ** 2


def consensus_bound(p: ProblemSpec, sigma2: float, eta: float, n: int,
                    horizon: int, alpha_t: float) -> float:
    """Envelope for the pairwise iterate distance at stepsize alpha(t)."""
    if sigma2 >= 1.0:
        raise MetricError("sigma2 must be below 1")
    log_term = math.log(horizon * math.sqrt(n * horizon)) / (1.0 - sigma2)
    amp = 1.0 + n * p.n_constraints ** 1.5 * p.lipschitz * p.radius / eta
    return 5.0 * p.lipschitz * amp * log_term ** 1.5 * alpha_t


def strict_violation_bound(p: ProblemSpec, sigma2: float, eta: float, n: int,
                           horizon: int, step_scale: float) -> float:
    """Explicit finite-horizon violation envelope for strictly feasible optima.

    Assembles the constraint-violation inequality with its consensus-term
    bound substituted, using the exact stepsize sums of the analysis
    window. Decays like eta log(T)/sqrt(T).
    """
    if sigma2 >= 1.0:
        raise MetricError("sigma2 must be below 1")
    ts = np.arange(horizon)
    alphas = step_scale / np.sqrt(ts + 1.0)
    s1 = float(alphas.sum())
    s2 = float((alphas ** 2).sum())
    lip, radius, m = p.lipschitz, p.radius, p.n_constraints
    log_term = math.log(horizon * math.sqrt(n * horizon)) / (1.0 - sigma2)
    amp = 1.0 + n * m ** 1.5 * lip * radius / eta
    a_const = m * lip ** 2 * radius ** 2 + 8.0 * lip ** 2 * amp ** 2 * log_term ** 1.5
    f_plus = 5.0 * lip ** 2 * amp * log_term ** 1.5 * s2 / s1
    return (2.0 * (eta + 1.0 / s1) * f_plus
            + 2.0 * (eta * s1 + 1.0) / s1 ** 2 * (2.0 * radius ** 2 + a_const * s2))


# ---------------------------------------------------------------------------
# auxiliary inequalities
# ---------------------------------------------------------------------------

def check_product_sum_inequality(alphas, eta: float) -> bool:
    """Check sum_l a(l) eta prod_{k>l} (1 - a(k) eta) <= 1 for every prefix.

    Requires a(t) * eta <= 1 throughout; evaluated by the stable forward
    recursion S(t) = (1 - a(t) eta) S(t-1) + a(t) eta.
    """
    thetas = [float(a) * eta for a in alphas]
    if any(th > 1.0 + 1e-15 or th < 0.0 for th in thetas):
        raise MetricError("precondition alpha(t) * eta <= 1 violated")
    s = 0.0
    for th in thetas:
        s = (1.0 - th) * s + th
        if s > 1.0 + 1e-12:
            return False
    return True


def check_tau_inequality(tau: int, t: int) -> bool:
    """Check sum_{r=t-tau+1}^{t-1} sqrt((t+1)/(r+1)) <= tau^{3/2}."""
    if tau < 1:
        raise MetricError(f"tau must be a positive integer, got {tau}")
    if t < tau - 1:
        raise MetricError(f"need t >= tau - 1, got tau={tau}, t={t}")
    total = sum(math.sqrt((t + 1.0) / (r + 1.0))
                for r in range(t - tau + 1, t))
    return total <= tau ** 1.5


# ---------------------------------------------------------------------------
# empirical rate fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    exponent: float
    r2: float


def rate_fit(trace, column: str, window: tuple[float, float]) -> RateFit:
    """Least-squares slope of log(metric) against log(t) over a window.

    ``trace`` may be a Trace or any iterable of IterationRecord. Requires
    at least 10 strictly positive records inside the window.
    """
    records = getattr(trace, "records", trace)
    lo, hi = window
    ts, ys = [], []
    for r in records:
        if lo <= r.t <= hi and r.t > 0:
            ts.append(float(r.t))
            ys.append(float(getattr(r, column)))
    if len(ts) < 10:
        raise MetricError(f"need >= 10 records in window, got {len(ts)}")
    y = np.array(ys)
    if np.any(y <= 0.0) or not np.all(np.isfinite(y)):
        raise MetricError("rate fit needs strictly positive finite values")
    lx = np.log(np.array(ts))
    ly = np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    fitted = slope * lx + intercept
    ss_res = float(np.sum((ly - fitted) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(exponent=float(slope), r2=r2)


# ---------------------------------------------------------------------------
# record assembly (used by the engine at sampled iterations)
# ---------------------------------------------------------------------------

def compute_record(p: ProblemSpec, states, t: int, eta: float, sigma2: float,
                   ref: ReferenceSolution | None = None,
                   initial_fgaps: np.ndarray | None = None,
                   initial_gnorms: np.ndarray | None = None,
                   grad_x_rows: np.ndarray | None = None,
                   grad_lambda_rows: np.ndarray | None = None) -> IterationRecord:
    """Assemble the metric record for the current states.

    At t = 0 (empty averages) the current iterates stand in for the
    averages, which pins eps and delta to exactly 1. ``initial_fgaps`` and
    ``initial_gnorms`` are the per-agent normalizers captured at t = 0.
    """
    outputs = states.output_points()
    lam_norms = np.linalg.norm(states.lam, axis=1)
    diffs = outputs_diameter(states.x)

    gvals = p.constraint_values_many(outputs)
    mean_g = gvals.mean(axis=0)
    violation_sq = float(np.sum(np.maximum(mean_g, 0.0) ** 2))
    gnorms = np.linalg.norm(gvals, axis=1)

    eps = math.nan
    max_gap = math.nan
    eps_absolute = False
    if ref is not None:
        fgaps = p.mean_objective_many(outputs) - ref.f_star
        max_gap = float(np.max(fgaps))
        if initial_fgaps is None:
            initial_fgaps = fgaps
        if np.min(np.abs(initial_fgaps)) < DEGENERATE_NORMALIZER:
            eps = float(np.max(np.abs(fgaps)))
            eps_absolute = True
        else:
            eps = float(np.max(np.abs(fgaps / initial_fgaps)))

    if initial_gnorms is None:
        initial_gnorms = gnorms
    if np.min(initial_gnorms) < DEGENERATE_NORMALIZER:
        delta = math.nan
    else:
        delta = float(np.max(gnorms / initial_gnorms))

    thm2 = math.nan
    if t >= 2 and eta > 0.0 and sigma2 < 1.0:
        c = _constant_c(p.n_constraints, p.lipschitz, p.radius, sigma2, eta,
                        t, states.x.shape[0])
        thm2 = p.radius * c * math.log(t) / (math.sqrt(t) - 1.0)

    max_gx = math.nan
    if grad_x_rows is not None:
        max_gx = float(np.max(np.linalg.norm(grad_x_rows, axis=1)))
    max_glam_excess = math.nan
    if grad_lambda_rows is not None:
        glam_sq = np.sum(grad_lambda_rows ** 2, axis=1)
        max_glam_excess = float(np.max(glam_sq - 2.0 * eta ** 2 * lam_norms ** 2))

    return IterationRecord(
        t=t, eps=eps, delta=delta,
        max_lambda_norm=float(np.max(lam_norms)),
        consensus_diameter=diffs,
        thm2_bound=thm2, violation_sq=violation_sq, max_gap=max_gap,
        sum_lambda_sq=float(np.sum(lam_norms ** 2)),
        max_grad_x_norm=max_gx, max_grad_lambda_excess=max_glam_excess,
        eps_absolute=eps_absolute,
    )


def outputs_diameter(points: np.ndarray) -> float:
    """Largest pairwise Euclidean distance among the rows of ``points``."""
    diffs = points[:, None, :] - points[None, :, :]
    return float(np.sqrt(np.max(np.sum(diffs ** 2, axis=2))))
