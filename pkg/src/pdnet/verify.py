"""Invariant and theory-bound verification suites behind `verify`.

Quick checks cover the algebraic identities (projections, unbiasedness,
auxiliary inequalities, matrix properties, determinism). The full level
adds the multiplier/subgradient/consensus envelopes and the rate and
violation monitors on small canonical runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine, graphs, lagrangian, metrics, problems


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _check(name, ok, detail="") -> CheckResult:
    return CheckResult(name=name, ok=bool(ok), detail=detail)


def _projection_checks(rng) -> list[CheckResult]:
    results = []
    worst_vi = 0.0
    ok_props = True
    for _ in range(1000):
        d = int(rng.integers(1, 8))
        radius = 0.5 + rng.random()
        v = rng.normal(size=d) * 3
        y = engine.project_ball(v, radius)
        ok_props &= np.linalg.norm(y) <= radius * (1.0 + 1e-12)
        ok_props &= bool(np.max(np.abs(engine.project_ball(y, radius) - y))
                         <= 1e-14)
        for _ in range(3):
            z = rng.normal(size=d)
            z *= rng.random() * radius / max(np.linalg.norm(z), 1e-9)
            worst_vi = max(worst_vi, float((v - y) @ (z - y)))
        w = rng.normal(size=d) * 3
        q = engine.project_orthant(w)
        ok_props &= np.all(q >= 0) and np.array_equal(q, np.maximum(w, 0))
    results.append(_check("ball projection properties",
                          ok_props and worst_vi <= 1e-9,
                          f"worst variational slack {worst_vi:.2e}"))
    return results


def _unbiasedness_check(rng) -> CheckResult:
    data = problems.generate_dataset(12, 4, seed=3)
    worst = 0.0
    for build in (problems.build_logistic_problem, problems.build_hinge_problem):
        p = build(data, 0.2, 0.2)
        for _ in range(100):
            x = rng.normal(size=4)
            x *= rng.random() / np.linalg.norm(x)
            lam = rng.random(p.n_constraints) * 2
            if rng.random() < 0.1:
                lam[:] = 0.0
            probs = lagrangian.sampling_distribution(lam)
            agent = int(rng.integers(p.n_agents))
            mix = sum(probs[k] * lagrangian.stochastic_grad_x(p, agent, x, lam, k)
                      for k in range(p.n_constraints))
            worst = max(worst, float(np.max(np.abs(
                mix - lagrangian.grad_x(p, agent, x, lam)))))
    return _check("constraint-sampling unbiasedness", worst <= 1e-12,
                  f"worst deviation {worst:.2e}")


def _inequality_checks(rng) -> list[CheckResult]:
    ok_ps = all(metrics.check_product_sum_inequality(rng.random(int(rng.integers(1, 80))), 1.0)
                for _ in range(500))
    ok_tau = all(metrics.check_tau_inequality(tau, t)
                 for tau in range(1, 21)
                 for t in range(tau - 1, 2000, 13))
    return [_check("stepsize product-sum inequality", ok_ps),
            _check("window-sum inequality", ok_tau)]


def _matrix_checks() -> CheckResult:
    cases = [
        graphs.generate_watts_strogatz(40, 6, 0.1, seed=1),
        graphs.generate_erdos_renyi(30, 0.2, seed=2),
        graphs.generate_lattice8(5, 6),
        graphs.generate_barbell(20, 2),
    ]
    ok = True
    detail = []
    for g in cases:
        allowed = g.adjacency_matrix() + np.eye(g.n)
        for w in (graphs.lazy_metropolis(g), graphs.laplacian_weights(g)):
            e = w.entries
            ok &= np.all(e >= 0)
            ok &= float(np.max(np.abs(e.sum(0) - 1))) <= 1e-12
            ok &= float(np.max(np.abs(e.sum(1) - 1))) <= 1e-12
            ok &= not np.any((e != 0) & (allowed == 0))
            ok &= np.allclose(e, e.T, atol=1e-15)
        lazy = graphs.lazy_metropolis(g)
        diag = np.diag(lazy.entries)
        ok &= bool(np.all(diag + 1e-12 >= lazy.entries.sum(1) - diag))
        margin = 71.0 * g.n ** 2 - 1.0 / (1.0 - lazy.sigma2)
        ok &= margin >= 0
        detail.append(f"n={g.n} spectral margin {margin:.3g}")
    return _check("mixing matrix suite", ok, "; ".join(detail))


def _determinism_check() -> CheckResult:
    data = problems.generate_dataset(20, 3, seed=5)
    again = problems.generate_dataset(20, 3, seed=5)
    ok = (np.array_equal(data.features, again.features)
          and np.array_equal(data.labels, again.labels))
    p = problems.build_logistic_problem(data, 0.1, 0.1)
    g = graphs.generate_erdos_renyi(20, 0.3, seed=4)
    w = graphs.lazy_metropolis(g)
    cfg = engine.RunConfig(variant="stochastic", eta=1.0, iterations=200,
                           record_every=20, seed=11)
    ok &= engine.run(p, w, cfg).to_csv_text() == engine.run(p, w, cfg).to_csv_text()
    return _check("seeded determinism", ok)


def quick_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = _projection_checks(rng)
    results.append(_unbiasedness_check(rng))
    results.extend(_inequality_checks(rng))
    results.append(_matrix_checks())
    results.append(_determinism_check())
    return results


# ---------------------------------------------------------------------------
# full level: bound monitors on canonical runs
# ---------------------------------------------------------------------------

def _canonical_run(eta=1.0, horizon=2000, margins=(0.1, 0.1), n=50,
                   variant="deterministic", with_reference=True):
    data = problems.generate_dataset(n, 5, seed=1)
    p = problems.build_logistic_problem(data, *margins)
    g = graphs.generate_watts_strogatz(n, 10, 0.02, seed=7)
    w = graphs.lazy_metropolis(g)
    ref = None
    if with_reference:
        ref = problems.reference_optimum(p, iterations=200_000)
    cfg = engine.RunConfig(variant=variant, eta=eta, iterations=horizon,
                           record_every=10, seed=1)
    trace = engine.run(p, w, cfg, reference=ref)
    return p, w, ref, trace


def bound_monitor_checks(p, w, ref, trace) -> list[CheckResult]:
    """Hard versions of the warn-only engine monitors, for one finished run."""
    cfg = trace.config
    n = p.n_agents
    lam_bound = metrics.lambda_norm_bound(p, cfg.eta, n)
    gx_bound = metrics.grad_x_norm_bound(p, cfg.eta, n)
    glam_bound = metrics.grad_lambda_excess_bound(p)
    lam_ok = all(r.sum_lambda_sq <= lam_bound + 1e-9 for r in trace.records)
    gx_ok = all(r.max_grad_x_norm <= gx_bound + 1e-9 for r in trace.records)
    glam_ok = all(r.max_grad_lambda_excess <= glam_bound + 1e-9
                  for r in trace.records)
    cons_ok = all(
        r.consensus_diameter <= metrics.consensus_bound(
            p, trace.sigma2, cfg.eta, n, max(cfg.iterations, 2),
            engine.stepsize(r.t, cfg)) + 1e-9
        for r in trace.records if r.t >= 1)
    out = [
        _check("multiplier norm bound", lam_ok,
               f"bound {lam_bound:.3g}, worst "
               f"{max(r.sum_lambda_sq for r in trace.records):.3g}"),
        _check("primal subgradient bound", gx_ok, f"bound {gx_bound:.3g}"),
        _check("dual subgradient bound", glam_ok, f"bound {glam_bound:.3g}"),
        _check("consensus distance bound", cons_ok),
    ]
    if ref is not None:
        budget_slack = ref.residual + 1e-4
        rate_ok = all(
            r.max_gap <= r.thm2_bound + budget_slack
            for r in trace.records if r.t >= 2 and not math.isnan(r.thm2_bound))
        out.append(_check("convergence rate bound", rate_ok))
    return out


def full_checks(seed: int = 0) -> list[CheckResult]:
    results = quick_checks(seed)
    p, w, ref, trace = _canonical_run()
    results.extend(bound_monitor_checks(p, w, ref, trace))

    # strictly feasible instance: violation envelope that decays with T
    p2, w2, _, trace2 = _canonical_run(margins=(0.9, 0.9), with_reference=False)
    cfg2 = trace2.config
    viol_ok = all(
        r.violation_sq <= metrics.strict_violation_bound(
            p2, trace2.sigma2, cfg2.eta, p2.n_agents, max(r.t, 2),
            cfg2.step_scale) + 1e-12
        for r in trace2.records if r.t >= 100)
    results.append(_check("strict-feasibility violation bound", viol_ok))
    return results
