"""Constrained problem instances: objectives, shared constraints, references.

A ProblemSpec bundles per-agent objective oracles, shared constraint
oracles, and the Lipschitz/radius metadata the algorithms rely on. The two
built-in families are box-constrained logistic and hinge regression on
synthetic unit-sphere data. A centralized projected-subgradient solver
provides the reference optimum used to normalize error metrics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

#: Oracle maps a point to (value, subgradient).
Oracle = Callable[[np.ndarray], tuple[float, np.ndarray]]


class ProblemError(ValueError):
    """Invalid problem construction or dimension mismatch."""


class ReferenceError(RuntimeError):
    """The reference solver failed to certify the requested accuracy."""


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """Unit-sphere features with labels in {-1, +1}.

    ``ground_truth_w`` is the Gaussian vector that generated the labels; it
    is None for datasets loaded from CSV (the format does not carry it).
    """

    features: np.ndarray          # (n, d), rows have unit norm
    labels: np.ndarray            # (n,) values in {-1, +1}
    ground_truth_w: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def to_csv_text(self) -> str:
        """First line ``d,n``, then one ``b, a_1..a_d`` row per sample."""
        lines = [f"{self.dim},{self.n}"]
        for b, a in zip(self.labels, self.features):
            lines.append(",".join([repr(float(b))] + [repr(float(v)) for v in a]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv_text(cls, text: str) -> "SyntheticDataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        d, n = (int(tok) for tok in lines[0].split(","))
        rows = [[float(tok) for tok in ln.split(",")] for ln in lines[1:]]
        if len(rows) != n or any(len(r) != d + 1 for r in rows):
            raise ProblemError("dataset CSV does not match its header")
        arr = np.array(rows)
        return cls(features=arr[:, 1:], labels=arr[:, 0])


def generate_dataset(n: int, d: int, seed: int = 0) -> SyntheticDataset:
    """Sample n unit-sphere feature vectors and Bernoulli labels.

    Features are normalized Gaussians; the label of sample i is +1 with
    probability 1/(1 + exp(<w, a_i>)) for a standard Gaussian w, else -1.
    Deterministic per seed.
    """
    if n < 1 or d < 1:
        raise ProblemError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, d))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    w = rng.normal(size=d)
    p_plus = expit(-(a @ w))
    b = np.where(rng.random(n) < p_plus, 1.0, -1.0)
    return SyntheticDataset(features=a, labels=b, ground_truth_w=w)


# ---------------------------------------------------------------------------
# problem specification
# ---------------------------------------------------------------------------

class _LossBoxOps:
    """Vectorized evaluation for data-point losses with box constraints.

    Kept numerically identical to the per-agent oracles: both paths go
    through the same elementwise formulas.
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray,
                 lower: np.ndarray, upper: np.ndarray, loss: str):
        self.features = features
        self.labels = labels
        self.lower = lower
        self.upper = upper
        self.loss = loss
        self.dim = features.shape[1]

    def _loss_terms(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-term loss value and d(loss)/dz at z = b <a, x>."""
        if self.loss == "logistic":
            return np.logaddexp(0.0, z), expit(z)
        margin = 1.0 - z
        return np.maximum(0.0, margin), np.where(margin > 0.0, -1.0, 0.0)

    def agent_objective_grads(self, x_rows: np.ndarray):
        z = self.labels * np.einsum("id,id->i", self.features, x_rows)
        vals, dz = self._loss_terms(z)
        grads = (self.labels * dz)[:, None] * self.features
        return vals, grads

    def mean_objective_many(self, points: np.ndarray) -> np.ndarray:
        z = (points @ self.features.T) * self.labels[None, :]
        vals, _ = self._loss_terms(z)
        return vals.mean(axis=1)

    def mean_objective_grad(self, x: np.ndarray):
        z = self.labels * (self.features @ x)
        vals, dz = self._loss_terms(z)
        grad = self.features.T @ (self.labels * dz) / len(self.labels)
        return float(vals.mean()), grad

    def constraint_values_many(self, points: np.ndarray) -> np.ndarray:
        return np.concatenate([self.lower[None, :] - points,
                               points - self.upper[None, :]], axis=1)

    def agent_constraint_combo(self, x_rows: np.ndarray, lam_rows: np.ndarray):
        d = self.dim
        return lam_rows[:, d:] - lam_rows[:, :d]

    def agent_constraint_rows(self, x_rows: np.ndarray, ks: np.ndarray):
        d = self.dim
        out = np.zeros_like(x_rows)
        idx = np.arange(len(ks))
        out[idx, ks % d] = np.where(ks < d, -1.0, 1.0)
        return out


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Per-agent objectives, shared constraints, and problem metadata.

    ``objectives[i]`` and ``constraints[k]`` map a point to (value,
    subgradient). All subgradient norms are bounded by ``lipschitz`` on the
    origin-centered ball of the given ``radius``, which contains the
    feasible set. ``box`` holds (lower, upper) bound vectors when the
    constraints form a box, enabling exact feasible-set projection.
    """

    dim: int
    n_constraints: int
    n_agents: int
    objectives: tuple[Oracle, ...]
    constraints: tuple[Oracle, ...]
    lipschitz: float
    radius: float
    box: tuple[np.ndarray, np.ndarray] | None = None
    family: str = "custom"
    fast: _LossBoxOps | None = None

    def __post_init__(self):
        if len(self.objectives) != self.n_agents:
            raise ProblemError("objective count does not match n_agents")
        if len(self.constraints) != self.n_constraints:
            raise ProblemError("constraint count does not match n_constraints")

    def _check_dim(self, x: np.ndarray):
        if x.shape[-1] != self.dim:
            raise ProblemError(f"expected dimension {self.dim}, got {x.shape[-1]}")

    # -- constraint evaluation ------------------------------------------------

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        self._check_dim(x)
        if self.fast is not None:
            return self.fast.constraint_values_many(x[None, :])[0]
        return np.array([g(x)[0] for g in self.constraints])

    def constraint_values_many(self, points: np.ndarray) -> np.ndarray:
        self._check_dim(points)
        if self.fast is not None:
            return self.fast.constraint_values_many(points)
        return np.array([[g(x)[0] for g in self.constraints] for x in points])

    def constraint_grads(self, x: np.ndarray) -> np.ndarray:
        self._check_dim(x)
        return np.array([g(x)[1] for g in self.constraints])

    # -- objective evaluation -------------------------------------------------

    def objective(self, agent: int, x: np.ndarray) -> tuple[float, np.ndarray]:
        self._check_dim(x)
        return self.objectives[agent](x)

    def mean_objective(self, x: np.ndarray) -> float:
        return float(self.mean_objective_many(x[None, :])[0])

    def mean_objective_many(self, points: np.ndarray) -> np.ndarray:
        """Cumulative objective f = (1/n) sum_i f_i at each row of points."""
        self._check_dim(points)
        if self.fast is not None:
            return self.fast.mean_objective_many(points)
        return np.array([
            sum(f(x)[0] for f in self.objectives) / self.n_agents
            for x in points
        ])

    def mean_objective_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        self._check_dim(x)
        if self.fast is not None:
            return self.fast.mean_objective_grad(x)
        total, grad = 0.0, np.zeros(self.dim)
        for f in self.objectives:
            v, g = f(x)
            total += v
            grad += g
        return total / self.n_agents, grad / self.n_agents

    # -- per-agent batched evaluation (row i belongs to agent i) ---------------

    def agent_objective_grads(self, x_rows: np.ndarray):
        self._check_dim(x_rows)
        if self.fast is not None:
            return self.fast.agent_objective_grads(x_rows)
        vals = np.empty(self.n_agents)
        grads = np.empty_like(x_rows)
        for i, f in enumerate(self.objectives):
            vals[i], grads[i] = f(x_rows[i])
        return vals, grads

    def agent_constraint_combo(self, x_rows: np.ndarray,
                               lam_rows: np.ndarray) -> np.ndarray:
        """sum_k lam[i, k] * grad g_k(x_i), one row per agent."""
        self._check_dim(x_rows)
        if self.fast is not None:
            return self.fast.agent_constraint_combo(x_rows, lam_rows)
        out = np.zeros_like(x_rows)
        for i in range(x_rows.shape[0]):
            for k, g in enumerate(self.constraints):
                lam = lam_rows[i, k]
                if lam != 0.0:
                    out[i] += lam * g(x_rows[i])[1]
        return out

    def agent_constraint_rows(self, x_rows: np.ndarray,
                              ks: np.ndarray) -> np.ndarray:
        """grad g_{k_i}(x_i), one row per agent, for sampled indices k_i."""
        self._check_dim(x_rows)
        if self.fast is not None:
            return self.fast.agent_constraint_rows(x_rows, ks)
        return np.array([self.constraints[k](x)[1] for k, x in zip(ks, x_rows)])


def box_constraints(lower: np.ndarray, upper: np.ndarray) -> tuple[Oracle, ...]:
    """Oracles for lower_k - x_k <= 0 (k < d) followed by x_k - upper_k <= 0.

    ``lower`` and ``upper`` are the actual bound vectors, so a symmetric
    margin l puts lower = -l * ones.
    """
    d = len(lower)

    def make_lower(k: int) -> Oracle:
        e = np.zeros(d)
        e[k] = -1.0
        return lambda x: (float(lower[k] - x[k]), e)

    def make_upper(k: int) -> Oracle:
        e = np.zeros(d)
        e[k] = 1.0
        return lambda x: (float(x[k] - upper[k]), e)

    return tuple([make_lower(k) for k in range(d)] +
                 [make_upper(k) for k in range(d)])


def _build_loss_problem(data: SyntheticDataset, l: float, u: float,
                        loss: str) -> ProblemSpec:
    if l <= 0 or u <= 0:
        raise ProblemError(f"box margins must be positive, got l={l}, u={u}")
    d = data.dim
    lower = np.full(d, -l)
    upper = np.full(d, u)
    fast = _LossBoxOps(data.features, data.labels, lower, upper, loss)

    def make_objective(i: int) -> Oracle:
        a = data.features[i]
        b = data.labels[i]

        def oracle(x: np.ndarray):
            z = b * float(a @ x)
            if loss == "logistic":
                return float(np.logaddexp(0.0, z)), b * float(expit(z)) * a
            margin = 1.0 - z
            if margin > 0.0:
                return margin, -b * a
            return 0.0, np.zeros(d)

        return oracle

    return ProblemSpec(
        dim=d,
        n_constraints=2 * d,
        n_agents=data.n,
        objectives=tuple(make_objective(i) for i in range(data.n)),
        constraints=box_constraints(lower, upper),
        lipschitz=1.0,
        radius=1.0,
        box=(lower, upper),
        family=loss,
        fast=fast,
    )


def build_logistic_problem(data: SyntheticDataset, l: float, u: float) -> ProblemSpec:
    """Per-agent loss log(1 + exp(b_i <a_i, x>)) with box constraints.

    The box gives m = 2d constraints; the unit-ball constraint is enforced
    by the algorithms' ball projection (radius 1), not as a g_k.
    """
    return _build_loss_problem(data, l, u, "logistic")


def build_hinge_problem(data: SyntheticDataset, l: float, u: float) -> ProblemSpec:
    """Per-agent loss max(0, 1 - b_i <a_i, x>) with box constraints.

    At the hinge kink the zero vector is returned (a valid subgradient,
    chosen for determinism).
    """
    return _build_loss_problem(data, l, u, "hinge")


def feasibility_report(p: ProblemSpec, x: np.ndarray):
    """Positive parts of constraint values plus the ball excess at x.

    Returns (violations, norm_excess) with violations[k] = max(0, g_k(x))
    and norm_excess = max(0, ||x|| - R).
    """
    if x.shape != (p.dim,):
        raise ProblemError(f"expected a vector of dimension {p.dim}, got {x.shape}")
    violations = np.maximum(0.0, p.constraint_values(x))
    excess = max(0.0, float(np.linalg.norm(x)) - p.radius)
    return violations, excess


def validate_lipschitz(p: ProblemSpec, seed: int = 0, n_points: int = 32,
                       tol: float = 1e-12) -> list[str]:
    """Spot-check subgradient norms against the declared Lipschitz bound.

    Samples points inside the radius ball, evaluates every objective and
    constraint oracle, and returns (and logs) a message per violation.
    """
    rng = np.random.default_rng(seed)
    failures = []
    for _ in range(n_points):
        x = rng.normal(size=p.dim)
        x *= rng.random() * p.radius / max(np.linalg.norm(x), 1e-30)
        for i, f in enumerate(p.objectives):
            norm = float(np.linalg.norm(f(x)[1]))
            if norm > p.lipschitz + tol:
                failures.append(f"objective {i}: subgradient norm {norm} > L")
        for k, g in enumerate(p.constraints):
            norm = float(np.linalg.norm(g(x)[1]))
            if norm > p.lipschitz + tol:
                failures.append(f"constraint {k}: subgradient norm {norm} > L")
    for msg in failures:
        log.error("Lipschitz bound violated: %s", msg)
    return failures


# ---------------------------------------------------------------------------
# reference optimum
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    """Reference optimal value and point for error normalization."""

    f_star: float
    x_star: np.ndarray
    method: str
    residual: float
    dual_estimate: np.ndarray | None = None

    def to_json_dict(self) -> dict:
        return {
            "f_star": self.f_star,
            "x_star": [float(v) for v in self.x_star],
            "method": self.method,
            "residual": self.residual,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ReferenceSolution":
        return cls(f_star=float(d["f_star"]), x_star=np.array(d["x_star"]),
                   method=str(d["method"]), residual=float(d["residual"]))


def project_box_ball(v: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                     radius: float, max_cycles: int = 200,
                     tol: float = 1e-12) -> np.ndarray:
    """Exact Euclidean projection onto box intersect ball.

    When the box fits inside the ball the projection is a plain clip;
    otherwise Dykstra's alternating-projection refinement runs until the
    iterate stabilizes (at most ``max_cycles`` cycles).
    """
    if float(np.linalg.norm(np.maximum(np.abs(lower), np.abs(upper)))) <= radius:
        return np.clip(v, lower, upper)
    x = np.asarray(v, dtype=float).copy()
    p_box = np.zeros_like(x)
    p_ball = np.zeros_like(x)
    for _ in range(max_cycles):
        y = np.clip(x + p_box, lower, upper)
        p_box_new = x + p_box - y
        z = y + p_ball
        norm = float(np.linalg.norm(z))
        x = z if norm <= radius else z * (radius / norm)
        p_ball_new = z - x
        # the iterate itself can stall for several cycles, so convergence is
        # judged on the correction increments
        shift = (float(np.sum((p_box_new - p_box) ** 2))
                 + float(np.sum((p_ball_new - p_ball) ** 2)))
        p_box, p_ball = p_box_new, p_ball_new
        if shift <= tol * tol:
            break
    return x


def _linear_min_box_ball(c: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                         radius: float) -> float:
    """min <c, y> over the box intersected with the radius ball.

    Solved through the 1-D dual in the ball multiplier; used for the
    Frank-Wolfe-style suboptimality certificate.
    """
    corner = np.where(c > 0, lower, upper)
    if float(np.linalg.norm(corner)) <= radius + 1e-12:
        return float(c @ corner)

    from scipy.optimize import brentq

    def y_of(nu: float) -> np.ndarray:
        return np.clip(-c / (2.0 * nu), lower, upper)

    def radius_gap(nu: float) -> float:
        return float(np.linalg.norm(y_of(nu))) - radius

    lo = 1e-12
    hi = max(float(np.max(np.abs(c))) / (2.0 * radius), lo) * 4.0 + 1.0
    while radius_gap(hi) > 0.0:
        hi *= 4.0
        if hi > 1e18:
            raise ReferenceError("linear subproblem dual failed to bracket")
    if radius_gap(lo) <= 0.0:
        y = y_of(lo)
    else:
        nu = brentq(radius_gap, lo, hi, xtol=1e-14, rtol=1e-14)
        y = y_of(nu)
    return float(c @ y)


def suboptimality_certificate(p: ProblemSpec, x: np.ndarray) -> float:
    """Upper bound on f(x) - f* from a subgradient at x.

    By convexity f* >= f(x) + min_y <grad, y - x> over the feasible set,
    so the returned linear gap bounds the suboptimality. Tight for smooth
    objectives near the optimum; possibly loose at nonsmooth points.
    """
    if p.box is None:
        raise ProblemError("certificate requires box-structured constraints")
    _, grad = p.mean_objective_grad(x)
    best = _linear_min_box_ball(grad, p.box[0], p.box[1], p.radius)
    return max(float(grad @ x) - best, 0.0)


def reference_optimum(p: ProblemSpec, iterations: int = 1_000_000,
                      seed: int = 0, step_scale: float | None = None,
                      residual_tol: float | None = None) -> ReferenceSolution:
    """Centralized projected subgradient for the reference optimum.

    Runs ``iterations`` steps of x <- Pi(x - c/sqrt(t+1) * grad f(x)) with
    exact projection onto box intersect ball, keeps the best iterate, and
    certifies its suboptimality via a linear-minimization gap. The
    certified residual is stored; if it exceeds 1e-4 a warning is logged,
    and if ``residual_tol`` is given the solver raises instead of silently
    accepting a non-converged answer.

    The ``seed`` only matters for tie-breaking experiments; the default
    start is the projected origin, so the solve is deterministic.
    """
    if p.box is None:
        raise ProblemError("reference solver requires box-structured constraints")
    if iterations < 1:
        raise ProblemError("iterations must be positive")
    lower, upper = p.box
    c = p.radius if step_scale is None else step_scale
    del seed  # deterministic start; kept in the signature for config plumbing

    x = project_box_ball(np.zeros(p.dim), lower, upper, p.radius)
    best_val = math.inf
    best_x = x.copy()
    for t in range(iterations):
        val, grad = p.mean_objective_grad(x)
        if val < best_val:
            best_val = val
            best_x = x.copy()
        x = project_box_ball(x - (c / math.sqrt(t + 1.0)) * grad,
                             lower, upper, p.radius)
    val, _ = p.mean_objective_grad(x)
    if val < best_val:
        best_val = val
        best_x = x.copy()

    residual = suboptimality_certificate(p, best_x)
    if residual > 1e-4:
        log.warning("reference solve residual %.3e exceeds 1e-4", residual)
    if residual_tol is not None and residual > residual_tol:
        raise ReferenceError(
            f"reference solve residual {residual:.3e} > {residual_tol:.1e}")

    violations, excess = feasibility_report(p, best_x)
    if float(np.max(violations, initial=0.0)) > 1e-8 or excess > 1e-8:
        raise ReferenceError("reference point is infeasible beyond 1e-8")
    return ReferenceSolution(f_star=float(best_val), x_star=best_x,
                             method="projected-subgradient",
                             residual=float(residual))


def grid_search_optimum(p: ProblemSpec, resolution: float = 1e-3) -> ReferenceSolution:
    """Brute-force grid reference for d <= 2 cross-checks.

    Scans the box at the given resolution, keeps feasible (in-ball) points,
    and reports the best value. The residual is the Lipschitz bound on the
    error of the grid spacing.
    """
    if p.box is None or p.dim > 2:
        raise ProblemError("grid search needs a box problem with d <= 2")
    lower, upper = p.box
    axes = [np.arange(lower[k], upper[k] + resolution / 2, resolution)
            for k in range(p.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    points = points[np.linalg.norm(points, axis=1) <= p.radius]
    if len(points) == 0:
        raise ProblemError("grid is empty: box does not intersect the ball")
    vals = p.mean_objective_many(points)
    k = int(np.argmin(vals))
    residual = 2.0 * p.lipschitz * resolution * math.sqrt(p.dim)
    return ReferenceSolution(f_star=float(vals[k]), x_star=points[k],
                             method="grid-search", residual=residual)
