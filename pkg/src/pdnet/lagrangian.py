"""Regularized Lagrangian values, subgradients, and constraint sampling.

The Lagrangian of agent i is f_i(x) + <lam, g(x)> - (eta/2) ||lam||^2; the
quadratic term keeps the multiplier norms bounded. The stochastic variant
replaces the full constraint-gradient sum with a single sampled constraint
scaled by ||lam||_1, which is an exact unbiased estimate under the
multiplier-proportional sampling distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import ProblemSpec, ProblemError


def validate_dual(lam: np.ndarray) -> np.ndarray:
    """Check that a multiplier vector lives in the nonnegative orthant."""
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1:
        raise ProblemError(f"multiplier vector must be 1-D, got shape {lam.shape}")
    if np.any(lam < 0.0):
        raise ProblemError("multiplier vector has negative components")
    return lam


@dataclass(frozen=True)
class RegularizationConfig:
    """Quadratic dual-regularization strength eta > 0."""

    eta: float

    def __post_init__(self):
        if not self.eta > 0.0:
            raise ProblemError(f"eta must be positive, got {self.eta}")

    def validate_schedule(self, alphas) -> None:
        """Require eta * alpha(t) <= 1/2 for every scheduled stepsize."""
        worst = max(float(a) for a in alphas)
        if self.eta * worst > 0.5 + 1e-12:
            raise ProblemError(
                f"eta * alpha = {self.eta * worst:.6g} exceeds 1/2; "
                "shrink the stepsize scale or eta")


def lagrangian_value(p: ProblemSpec, agent: int, x: np.ndarray,
                     lam: np.ndarray, reg: RegularizationConfig) -> float:
    """f_i(x) + <lam, g(x)> - (eta/2) ||lam||^2."""
    lam = validate_dual(lam)
    if len(lam) != p.n_constraints:
        raise ProblemError("multiplier dimension does not match constraint count")
    fval, _ = p.objective(agent, x)
    g = p.constraint_values(x)
    return float(fval + lam @ g - 0.5 * reg.eta * float(lam @ lam))


def grad_x(p: ProblemSpec, agent: int, x: np.ndarray,
           lam: np.ndarray) -> np.ndarray:
    """Primal subgradient: grad f_i(x) + sum_k lam_k grad g_k(x)."""
    lam = validate_dual(lam)
    if len(lam) != p.n_constraints:
        raise ProblemError("multiplier dimension does not match constraint count")
    _, gf = p.objective(agent, x)
    combo = p.agent_constraint_combo(x[None, :], lam[None, :])[0]
    return gf + combo


def grad_lambda(p: ProblemSpec, x: np.ndarray, lam: np.ndarray,
                reg: RegularizationConfig) -> np.ndarray:
    """Dual gradient: g(x) - eta * lam."""
    lam = validate_dual(lam)
    if len(lam) != p.n_constraints:
        raise ProblemError("multiplier dimension does not match constraint count")
    return p.constraint_values(x) - reg.eta * lam


def sampling_distribution(lam: np.ndarray) -> np.ndarray:
    """Constraint-sampling probabilities proportional to the multipliers.

    p_k = lam_k / ||lam||_1 when the multipliers carry any mass, uniform
    otherwise (the exact-zero vector produced by orthant projection).
    """
    lam = validate_dual(lam)
    total = float(lam.sum())
    if total > 0.0:
        return lam / total
    return np.full(len(lam), 1.0 / len(lam))


def stochastic_grad_x(p: ProblemSpec, agent: int, x: np.ndarray,
                      lam: np.ndarray, k: int) -> np.ndarray:
    """Sampled primal subgradient: grad f_i(x) + ||lam||_1 grad g_k(x)."""
    lam = validate_dual(lam)
    if not 0 <= k < p.n_constraints:
        raise ProblemError(f"constraint index {k} out of range")
    _, gf = p.objective(agent, x)
    gk = p.agent_constraint_rows(x[None, :], np.array([k]))[0]
    return gf + float(lam.sum()) * gk


# ---------------------------------------------------------------------------
# counter-based sampling streams
# ---------------------------------------------------------------------------

def iteration_uniforms(seed: int, t: int, n: int) -> np.ndarray:
    """One uniform per agent for iteration t, from a counter-based stream.

    Keyed by (run seed, iteration); agent i consumes entry i. Independent
    of scheduling and parallelism, so runs replay bit-identically.
    """
    key = np.array([np.uint64(seed), np.uint64(t)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).random(n)


def sample_constraint_indices(lam_rows: np.ndarray,
                              uniforms: np.ndarray) -> np.ndarray:
    """Draw one constraint index per agent from its sampling distribution."""
    m = lam_rows.shape[1]
    totals = lam_rows.sum(axis=1, keepdims=True)
    probs = np.where(totals > 0.0, lam_rows / np.where(totals > 0.0, totals, 1.0),
                     1.0 / m)
    cumulative = np.cumsum(probs, axis=1)
    ks = (cumulative <= uniforms[:, None]).sum(axis=1)
    return np.minimum(ks, m - 1)
