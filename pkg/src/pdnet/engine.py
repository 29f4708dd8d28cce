"""Synchronous multi-agent primal-dual iteration engine.

Executes the deterministic and constraint-sampling variants of the
distributed regularized primal-dual method, plus the centralized
unregularized baseline. All agents read the iteration-t snapshot and then
write t+1; reductions run in a fixed agent order and the sampling streams
are counter-based, so traces replay bit-identically for a given config.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .graphs import ConsensusMatrix
from .lagrangian import iteration_uniforms, sample_constraint_indices
from .metrics import IterationRecord
from .problems import ProblemSpec, ReferenceSolution

log = logging.getLogger(__name__)

DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"
CENTRALIZED_UNREGULARIZED = "centralized_unregularized"
VARIANTS = (DETERMINISTIC, STOCHASTIC, CENTRALIZED_UNREGULARIZED)

INIT_ORIGIN = "origin"
INIT_RANDOM_FEASIBLE = "random_feasible"

#: Dual iterates beyond this norm abort the run (reachable only without
#: regularization, where the multipliers are unbounded by design).
LAMBDA_GUARD = 1e6


class EngineError(ValueError):
    """Invalid run configuration or inconsistent dimensions."""


class DivergenceError(RuntimeError):
    """Non-finite or runaway iterates; the run is aborted with context."""


@dataclass(frozen=True)
class RunConfig:
    """Full description of one run.

    ``step_scale`` is the constant c in alpha(t) = c / sqrt(t+1); when
    None it resolves to the problem radius, capped at 1/(2 eta) so the
    regularized variants satisfy their stepsize precondition.
    ``record_every`` is the metric sampling stride. ``monitor_bounds``
    turns on warn-only theory-bound monitors at recorded iterations.
    """

    variant: str = DETERMINISTIC
    iterations: int = 10_000
    eta: float = 1.0
    step_scale: float | None = None
    seed: int = 0
    init: str = INIT_ORIGIN
    record_every: int = 10
    monitor_bounds: bool = False
    debug_constant_step: float | None = None


def resolve_config(cfg: RunConfig, p: ProblemSpec) -> RunConfig:
    """Fill defaults and enforce the stepsize/regularization precondition."""
    if cfg.variant not in VARIANTS:
        raise EngineError(f"unknown variant {cfg.variant!r}")
    if cfg.iterations < 0:
        raise EngineError("iteration count must be nonnegative")
    if cfg.record_every < 1:
        raise EngineError("record_every must be >= 1")
    if cfg.init not in (INIT_ORIGIN, INIT_RANDOM_FEASIBLE):
        raise EngineError(f"unknown init {cfg.init!r}")
    if cfg.seed < 0:
        raise EngineError("seed must be nonnegative")

    if cfg.variant == CENTRALIZED_UNREGULARIZED:
        eta = 0.0
        scale = cfg.step_scale if cfg.step_scale is not None else p.radius
    else:
        eta = cfg.eta
        if not eta > 0.0:
            raise EngineError("regularized variants need eta > 0")
        scale = cfg.step_scale
        if scale is None:
            scale = min(p.radius, 0.5 / eta)
        if eta * scale > 0.5 + 1e-12:
            raise EngineError(
                f"eta * alpha(0) = {eta * scale:.6g} exceeds 1/2; lower "
                "step_scale or eta")
    if not scale > 0.0:
        raise EngineError("step scale must be positive")
    return dataclasses.replace(cfg, eta=eta, step_scale=scale)


def stepsize(t: int, cfg: RunConfig) -> float:
    """alpha(t) = step_scale / sqrt(t + 1)."""
    if t < 0:
        raise EngineError("iteration index must be nonnegative")
    if cfg.debug_constant_step is not None:
        return cfg.debug_constant_step
    if cfg.step_scale is None:
        raise EngineError("step_scale unresolved; call resolve_config first")
    return cfg.step_scale / math.sqrt(t + 1.0)


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def project_ball(x: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the origin-centered ball: R x / max(R, ||x||)."""
    if not radius > 0.0:
        raise EngineError("ball radius must be positive")
    norm = float(np.linalg.norm(x))
    return x * (radius / max(radius, norm))


def project_ball_rows(rows: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    return rows * (radius / np.maximum(radius, norms))[:, None]


def project_orthant(v: np.ndarray) -> np.ndarray:
    """Componentwise positive part."""
    return np.maximum(v, 0.0)


# ---------------------------------------------------------------------------
# agent states
# ---------------------------------------------------------------------------

@dataclass
class AgentStates:
    """Per-agent primal/dual iterates and running-average accumulators.

    Row i of each array belongs to agent i. The running average is
    avg_numerator / weight_sum once any weight has accumulated.
    """

    x: np.ndarray              # (n, d), inside the radius ball
    lam: np.ndarray            # (n, m), componentwise nonnegative
    avg_numerator: np.ndarray  # (n, d), sum of alpha(s) * x(s)
    weight_sum: float          # sum of alpha(s)

    @property
    def n_agents(self) -> int:
        return self.x.shape[0]

    def averages(self) -> np.ndarray | None:
        """Running averages, or None while no weight has accumulated."""
        if self.weight_sum <= 0.0:
            return None
        return self.avg_numerator / self.weight_sum

    def output_points(self) -> np.ndarray:
        """Averages, falling back to the current iterates at time zero."""
        avg = self.averages()
        return self.x.copy() if avg is None else avg

    def copy(self) -> "AgentStates":
        return AgentStates(self.x.copy(), self.lam.copy(),
                           self.avg_numerator.copy(), self.weight_sum)


def _mix(w: np.ndarray, rows: np.ndarray) -> np.ndarray:
    # einsum keeps the reduction single-threaded and order-fixed, so results
    # do not depend on the BLAS thread count
    return np.einsum("ij,jd->id", w, rows)


def initial_states(p: ProblemSpec, cfg: RunConfig) -> AgentStates:
    """x_i(0) at the origin or a random feasible point; lam_i(0) = 0."""
    n, d = p.n_agents, p.dim
    if cfg.init == INIT_ORIGIN:
        x0 = np.zeros((n, d))
    else:
        x0 = np.vstack([_random_feasible_point(p, cfg.seed, i) for i in range(n)])
    return AgentStates(x=x0, lam=np.zeros((n, p.n_constraints)),
                       avg_numerator=np.zeros((n, d)), weight_sum=0.0)


def _random_feasible_point(p: ProblemSpec, seed: int, agent: int) -> np.ndarray:
    """Sphere sample scaled into the feasible set by bisection to the origin."""
    if np.any(p.constraint_values(np.zeros(p.dim)) > 0.0):
        raise EngineError("random_feasible init needs a feasible origin")
    key = np.array([np.uint64(seed), np.uint64(2 ** 63 + agent)], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    v = rng.normal(size=p.dim)
    v *= p.radius / max(float(np.linalg.norm(v)), 1e-300)

    def feasible(c: float) -> bool:
        return bool(np.all(p.constraint_values(c * v) <= 0.0))

    if feasible(1.0):
        return v
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo * v


# ---------------------------------------------------------------------------
# one synchronous step
# ---------------------------------------------------------------------------

def _deterministic_directions(p: ProblemSpec, x: np.ndarray, lam: np.ndarray,
                              eta: float):
    _, grad_f = p.agent_objective_grads(x)
    g_vals = p.constraint_values_many(x)
    grad_x = grad_f + p.agent_constraint_combo(x, lam)
    grad_lam = g_vals - eta * lam
    return grad_x, grad_lam


def _stochastic_directions(p: ProblemSpec, x: np.ndarray, lam: np.ndarray,
                           eta: float, uniforms: np.ndarray):
    _, grad_f = p.agent_objective_grads(x)
    g_vals = p.constraint_values_many(x)
    ks = sample_constraint_indices(lam, uniforms)
    rows = p.agent_constraint_rows(x, ks)
    grad_x = grad_f + lam.sum(axis=1)[:, None] * rows
    grad_lam = g_vals - eta * lam
    return grad_x, grad_lam


def _advance(states: AgentStates, p: ProblemSpec, w: ConsensusMatrix, t: int,
             cfg: RunConfig, grad_x: np.ndarray,
             grad_lam: np.ndarray) -> AgentStates:
    alpha = stepsize(t, cfg)
    y = states.x - alpha * grad_x
    gamma = states.lam + alpha * grad_lam
    new_x = project_ball_rows(_mix(w.entries, y), p.radius)
    new_lam = project_orthant(_mix(w.entries, gamma))

    if not (np.all(np.isfinite(new_x)) and np.all(np.isfinite(new_lam))):
        raise DivergenceError(f"non-finite iterate at t={t}")
    max_lam = float(np.max(np.linalg.norm(new_lam, axis=1), initial=0.0))
    if max_lam > LAMBDA_GUARD:
        raise DivergenceError(
            f"dual norm {max_lam:.3e} exceeded the guard at t={t}")

    num = states.avg_numerator
    wsum = states.weight_sum
    if wsum == 0.0:
        # seed the window with the starting point at weight alpha(t)
        num = num + alpha * states.x
        wsum += alpha
    alpha_next = stepsize(t + 1, cfg)
    num = num + alpha_next * new_x
    wsum += alpha_next
    return AgentStates(x=new_x, lam=new_lam, avg_numerator=num, weight_sum=wsum)


def step_deterministic(states: AgentStates, p: ProblemSpec, w: ConsensusMatrix,
                       t: int, cfg: RunConfig) -> AgentStates:
    """One full-gradient primal-dual step from the iteration-t snapshot."""
    grad_x, grad_lam = _deterministic_directions(p, states.x, states.lam, cfg.eta)
    return _advance(states, p, w, t, cfg, grad_x, grad_lam)


def step_stochastic(states: AgentStates, p: ProblemSpec, w: ConsensusMatrix,
                    t: int, cfg: RunConfig) -> AgentStates:
    """One constraint-sampling step; the dual direction is unchanged."""
    uniforms = iteration_uniforms(cfg.seed, t, states.n_agents)
    grad_x, grad_lam = _stochastic_directions(p, states.x, states.lam,
                                              cfg.eta, uniforms)
    return _advance(states, p, w, t, cfg, grad_x, grad_lam)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

@dataclass
class Trace:
    """Recorded metrics plus the initial and final agent states."""

    records: list[IterationRecord]
    initial_states: AgentStates
    final_states: AgentStates
    config: RunConfig
    sigma2: float
    aborted: str | None = None
    warnings: list[str] = field(default_factory=list)
    trajectory: list[np.ndarray] | None = None

    def to_csv_text(self) -> str:
        lines = [",".join(metrics.CSV_COLUMNS)]
        lines += [metrics.record_csv_row(r) for r in self.records]
        return "\n".join(lines) + "\n"


def run(p: ProblemSpec, w: ConsensusMatrix, cfg: RunConfig,
        reference: ReferenceSolution | None = None,
        keep_trajectory: bool = False) -> Trace:
    """Run the configured primal-dual variant for cfg.iterations steps.

    Metrics are recorded at t = 0, every ``record_every`` iterations, and
    at the final horizon. Passing a reference optimum enables the relative
    error and rate-bound columns. On divergence the partial trace is
    returned with ``aborted`` set.
    """
    cfg = resolve_config(cfg, p)
    if cfg.variant == CENTRALIZED_UNREGULARIZED:
        raise EngineError("use run_centralized_unregularized for the baseline")
    if w.n != p.n_agents:
        raise EngineError(
            f"mixing matrix is {w.n}x{w.n} but the problem has "
            f"{p.n_agents} agents")
    return _run_loop(p, w, cfg, reference, keep_trajectory)


def run_centralized_unregularized(p: ProblemSpec, cfg: RunConfig,
                                  reference: ReferenceSolution | None = None,
                                  keep_trajectory: bool = False) -> Trace:
    """Single-agent unregularized baseline on the mean objective.

    Equivalent to the deterministic variant with one agent holding
    f = (1/n) sum f_i, identity mixing, and eta = 0. Without the
    regularizer the dual norm is unbounded; the runaway guard applies.
    """
    if cfg.variant != CENTRALIZED_UNREGULARIZED:
        raise EngineError("config variant must be centralized_unregularized")
    cfg = resolve_config(cfg, p)
    single = centralized_mean_problem(p)
    w1 = ConsensusMatrix.from_entries(np.array([[1.0]]))
    return _run_loop(single, w1, cfg, reference, keep_trajectory)


def centralized_mean_problem(p: ProblemSpec) -> ProblemSpec:
    """Collapse an n-agent problem to one agent holding the mean objective."""
    if p.n_agents == 1:
        return p
    return ProblemSpec(
        dim=p.dim, n_constraints=p.n_constraints, n_agents=1,
        objectives=(p.mean_objective_grad,),
        constraints=p.constraints,
        lipschitz=p.lipschitz, radius=p.radius, box=p.box,
        family=p.family + "-mean", fast=_MeanOps(p),
    )


class _MeanOps:
    """Batched evaluation adapter for the collapsed single-agent problem."""

    def __init__(self, p: ProblemSpec):
        self._p = p

    def agent_objective_grads(self, x_rows):
        val, grad = self._p.mean_objective_grad(x_rows[0])
        return np.array([val]), grad[None, :]

    def mean_objective_many(self, points):
        return self._p.mean_objective_many(points)

    def mean_objective_grad(self, x):
        return self._p.mean_objective_grad(x)

    def constraint_values_many(self, points):
        return self._p.constraint_values_many(points)

    def agent_constraint_combo(self, x_rows, lam_rows):
        return self._p.agent_constraint_combo(x_rows, lam_rows)

    def agent_constraint_rows(self, x_rows, ks):
        return self._p.agent_constraint_rows(x_rows, ks)


def _run_loop(p: ProblemSpec, w: ConsensusMatrix, cfg: RunConfig,
              reference: ReferenceSolution | None,
              keep_trajectory: bool) -> Trace:
    states = initial_states(p, cfg)
    initial = states.copy()
    outputs0 = initial.output_points()
    initial_gnorms = np.linalg.norm(p.constraint_values_many(outputs0), axis=1)
    initial_fgaps = None
    if reference is not None:
        initial_fgaps = p.mean_objective_many(outputs0) - reference.f_star

    trace = Trace(records=[], initial_states=initial, final_states=states,
                  config=cfg, sigma2=w.sigma2,
                  trajectory=[states.x.copy()] if keep_trajectory else None)

    def record_now(t: int, grad_x, grad_lam):
        rec = metrics.compute_record(
            p, states, t, cfg.eta, w.sigma2, ref=reference,
            initial_fgaps=initial_fgaps, initial_gnorms=initial_gnorms,
            grad_x_rows=grad_x, grad_lambda_rows=grad_lam)
        trace.records.append(rec)
        if cfg.monitor_bounds:
            _monitor_record(trace, p, cfg, rec, reference)

    try:
        for t in range(cfg.iterations):
            if cfg.variant == STOCHASTIC:
                uniforms = iteration_uniforms(cfg.seed, t, states.n_agents)
                grad_x, grad_lam = _stochastic_directions(
                    p, states.x, states.lam, cfg.eta, uniforms)
            else:
                grad_x, grad_lam = _deterministic_directions(
                    p, states.x, states.lam, cfg.eta)
            if t % cfg.record_every == 0:
                record_now(t, grad_x, grad_lam)
            states = _advance(states, p, w, t, cfg, grad_x, grad_lam)
            trace.final_states = states
            if keep_trajectory:
                trace.trajectory.append(states.x.copy())
    except DivergenceError as exc:
        trace.aborted = str(exc)
        log.error("run aborted: %s", exc)
        return trace

    grad_x, grad_lam = _deterministic_directions(p, states.x, states.lam, cfg.eta)
    record_now(cfg.iterations, grad_x, grad_lam)
    return trace


def _monitor_record(trace: Trace, p: ProblemSpec, cfg: RunConfig,
                    rec: IterationRecord,
                    reference: ReferenceSolution | None) -> None:
    """Warn-only theory-bound monitors (hard assertions live in the tests)."""
    if cfg.eta <= 0.0:
        return
    tol = 1e-9
    n = p.n_agents
    checks = [
        ("multiplier norm", rec.sum_lambda_sq,
         metrics.lambda_norm_bound(p, cfg.eta, n)),
        ("primal subgradient", rec.max_grad_x_norm,
         metrics.grad_x_norm_bound(p, cfg.eta, n)),
        ("dual subgradient excess", rec.max_grad_lambda_excess,
         metrics.grad_lambda_excess_bound(p)),
    ]
    if rec.t >= 1:
        checks.append(("consensus diameter", rec.consensus_diameter,
                       metrics.consensus_bound(p, trace.sigma2, cfg.eta, n,
                                               max(cfg.iterations, 2),
                                               stepsize(rec.t, cfg))))
    if reference is not None and not math.isnan(rec.thm2_bound):
        budget = rec.thm2_bound + reference.residual + 1e-4
        checks.append(("rate bound", rec.max_gap, budget))
    for name, value, bound in checks:
        if not math.isnan(value) and value > bound * (1.0 + tol) + tol:
            msg = (f"t={rec.t}: {name} {value:.6g} exceeds its bound "
                   f"{bound:.6g}")
            trace.warnings.append(msg)
            log.warning("%s", msg)
