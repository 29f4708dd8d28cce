"""Engine: projections, steps, runs, averaging, determinism, guards."""

import dataclasses
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pdnet import engine as en
from pdnet import metrics
from pdnet.graphs import ConsensusMatrix, GraphTopology, lazy_metropolis
from pdnet.problems import build_logistic_problem, generate_dataset

from conftest import make_custom_problem, toy_problem


def identity_matrix(n=1):
    return ConsensusMatrix.from_entries(np.eye(n))


def complete_matrix(n):
    cliques = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return lazy_metropolis(GraphTopology.from_edges(n, cliques))


# -- projections ---------------------------------------------------------------

def test_project_ball_scales_outside():
    assert_allclose(en.project_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])


def test_project_ball_identity_inside():
    x = np.array([0.1, 0.2])
    assert np.array_equal(en.project_ball(x, 1.0), x)
    z = np.zeros(3)
    assert np.array_equal(en.project_ball(z, 2.0), z)


def test_project_orthant():
    assert_allclose(en.project_orthant(np.array([-1.0, 2.0, 0.0])), [0, 2, 0])
    assert_allclose(en.project_orthant(np.array([-3.0, -1.0])), [0, 0])
    x = np.array([0.5, 0.0, 4.0])
    assert np.array_equal(en.project_orthant(x), x)


# -- stepsize and config --------------------------------------------------------

def test_stepsize_schedule():
    cfg = en.RunConfig(step_scale=1.0)
    assert en.stepsize(0, cfg) == 1.0
    assert en.stepsize(3, cfg) == 0.5
    cfg_r = en.RunConfig(step_scale=0.7)
    assert en.stepsize(99, cfg_r) == pytest.approx(0.07)


def test_resolve_config_caps_step_scale(paper_logistic):
    resolved = en.resolve_config(en.RunConfig(eta=1.0), paper_logistic)
    assert resolved.step_scale == 0.5
    resolved = en.resolve_config(en.RunConfig(eta=0.25), paper_logistic)
    assert resolved.step_scale == 1.0  # radius bound is the binding cap


def test_resolve_config_rejects_violating_scale(paper_logistic):
    with pytest.raises(en.EngineError):
        en.resolve_config(en.RunConfig(eta=1.0, step_scale=1.0), paper_logistic)
    with pytest.raises(en.EngineError):
        en.resolve_config(en.RunConfig(eta=0.0), paper_logistic)
    with pytest.raises(en.EngineError):
        en.resolve_config(en.RunConfig(variant="nope"), paper_logistic)


def test_resolve_config_baseline_forces_eta(paper_logistic):
    cfg = en.RunConfig(variant=en.CENTRALIZED_UNREGULARIZED, eta=3.0)
    resolved = en.resolve_config(cfg, paper_logistic)
    assert resolved.eta == 0.0
    assert resolved.step_scale == paper_logistic.radius


# -- single steps -----------------------------------------------------------------

def test_hand_stepped_single_agent():
    # one agent, f(x) = x, g(x) = x - 1/2, eta = 1, alpha(0) = 1:
    # y = -1 projects to the ball boundary, dual direction clips to zero
    p = toy_problem()
    cfg = en.RunConfig(eta=1.0, step_scale=1.0)
    states = en.initial_states(p, cfg)
    out = en.step_deterministic(states, p, identity_matrix(), 0, cfg)
    assert_allclose(out.x, [[-1.0]])
    assert_allclose(out.lam, [[0.0]])


def test_dual_stays_zero_when_feasible():
    f = lambda x: (float(np.sin(x[0])), np.array([np.cos(x[0]), 0.0]))
    g = lambda x: (float(x[0] - 10.0), np.array([1.0, 0.0]))
    p = make_custom_problem([f], [g], lipschitz=1.0, radius=1.0, dim=2)
    cfg = en.RunConfig(eta=1.0, iterations=50, record_every=5)
    trace = en.run(p, identity_matrix(), cfg)
    assert trace.final_states.lam.max() == 0.0
    assert all(r.max_lambda_norm == 0.0 for r in trace.records)


def test_identical_agents_stay_identical():
    f = lambda x: (float(x @ x), 2 * x)
    g = lambda x: (float(x[0] - 0.5), np.array([1.0, 0.0]))
    p = make_custom_problem([f] * 4, [g], lipschitz=2.0, radius=1.0, dim=2)
    cfg = en.RunConfig(eta=0.5, iterations=30)
    trace = en.run(p, complete_matrix(4), cfg, keep_trajectory=True)
    for snap in trace.trajectory:
        assert np.max(np.abs(snap - snap[0])) == 0.0


def test_single_constraint_stochastic_equals_deterministic():
    f = lambda x: (float(x[0] ** 2), np.array([2 * x[0]]))
    g = lambda x: (float(x[0] - 0.2), np.array([1.0]))
    p = make_custom_problem([f, f], [g], lipschitz=2.0, radius=1.0, dim=1)
    w = complete_matrix(2)
    det = en.run(p, w, en.RunConfig(variant="deterministic", eta=1.0,
                                    iterations=40, seed=3))
    sto = en.run(p, w, en.RunConfig(variant="stochastic", eta=1.0,
                                    iterations=40, seed=3))
    assert np.array_equal(det.final_states.x, sto.final_states.x)
    assert np.array_equal(det.final_states.lam, sto.final_states.lam)


def test_stochastic_update_seed_independent_while_dual_zero():
    # with lam = 0 the sampled index does not enter the primal direction
    f = lambda x: (float(x[0]), np.array([1.0, 0.0]))
    gs = [lambda x: (float(x[0] - 5.0), np.array([1.0, 0.0])),
          lambda x: (float(x[1] - 5.0), np.array([0.0, 1.0]))]
    p = make_custom_problem([f] * 3, gs, lipschitz=1.0, radius=1.0, dim=2)
    w = complete_matrix(3)
    a = en.run(p, w, en.RunConfig(variant="stochastic", eta=1.0,
                                  iterations=25, seed=1))
    b = en.run(p, w, en.RunConfig(variant="stochastic", eta=1.0,
                                  iterations=25, seed=999))
    assert np.array_equal(a.final_states.x, b.final_states.x)
    assert a.final_states.lam.max() == 0.0


def test_enumerated_stochastic_mean_matches_deterministic(paper_logistic):
    from pdnet.lagrangian import sampling_distribution
    rng = np.random.default_rng(0)
    x = rng.normal(size=(paper_logistic.n_agents, 5)) * 0.1
    lam = rng.random((paper_logistic.n_agents, 10))
    gx_det, glam_det = en._deterministic_directions(paper_logistic, x, lam, 1.0)
    mean_gx = np.zeros_like(gx_det)
    for k in range(10):
        ks = np.full(paper_logistic.n_agents, k)
        rows = paper_logistic.agent_constraint_rows(x, ks)
        stoch = (paper_logistic.agent_objective_grads(x)[1]
                 + lam.sum(axis=1)[:, None] * rows)
        probs = np.array([sampling_distribution(l)[k] for l in lam])
        mean_gx += probs[:, None] * stoch
    assert_allclose(mean_gx, gx_det, atol=1e-12)


# -- runs --------------------------------------------------------------------------

def test_running_average_matches_recomputation():
    data = generate_dataset(6, 3, seed=2)
    p = build_logistic_problem(data, 0.2, 0.2)
    w = complete_matrix(6)
    cfg = en.RunConfig(eta=1.0, iterations=37, record_every=7)
    trace = en.run(p, w, cfg, keep_trajectory=True)
    resolved = trace.config
    alphas = np.array([en.stepsize(s, resolved)
                       for s in range(len(trace.trajectory))])
    xs = np.stack(trace.trajectory)  # (T+1, n, d)
    manual = np.einsum("s,snd->nd", alphas, xs) / alphas.sum()
    assert np.max(np.abs(manual - trace.final_states.averages())) < 1e-10


def test_zero_iteration_run(paper_logistic, ws_matrix):
    cfg = en.RunConfig(eta=1.0, iterations=0)
    trace = en.run(paper_logistic, ws_matrix, cfg)
    assert len(trace.records) == 1 and trace.records[0].t == 0
    assert trace.final_states.weight_sum == 0.0
    assert trace.final_states.averages() is None
    assert np.array_equal(trace.final_states.output_points(),
                          np.zeros((100, 5)))
    assert trace.records[0].eps is math.nan or math.isnan(trace.records[0].eps)


def test_initial_record_eps_is_one(paper_logistic, ws_matrix, paper_reference):
    cfg = en.RunConfig(eta=1.0, iterations=20, record_every=10)
    trace = en.run(paper_logistic, ws_matrix, cfg, reference=paper_reference)
    assert trace.records[0].t == 0
    assert trace.records[0].eps == 1.0
    assert trace.records[0].delta == 1.0


def test_iterates_respect_projections():
    data = generate_dataset(5, 3, seed=9)
    p = build_logistic_problem(data, 0.1, 0.1)
    w = complete_matrix(5)
    cfg = en.RunConfig(eta=1.0, iterations=60, record_every=6)
    trace = en.run(p, w, cfg, keep_trajectory=True)
    for snap in trace.trajectory:
        assert np.all(np.linalg.norm(snap, axis=1) <= 1.0 + 1e-12)
    assert np.all(trace.final_states.lam >= 0.0)
    avg = trace.final_states.averages()
    assert np.all(np.linalg.norm(avg, axis=1) <= 1.0 + 1e-9)


def test_bit_identical_reruns(paper_logistic, ws_matrix, paper_reference):
    for variant in ("deterministic", "stochastic"):
        cfg = en.RunConfig(variant=variant, eta=1.0, iterations=150,
                           record_every=10, seed=5)
        a = en.run(paper_logistic, ws_matrix, cfg, reference=paper_reference)
        b = en.run(paper_logistic, ws_matrix, cfg, reference=paper_reference)
        assert a.to_csv_text() == b.to_csv_text()
        assert np.array_equal(a.final_states.x, b.final_states.x)


def test_divergence_guard_aborts():
    f = lambda x: (float(x[0]), np.array([1.0]))
    g = lambda x: (1e7, np.array([0.0]))
    p = make_custom_problem([f], [g], lipschitz=1.0, radius=1.0, dim=1)
    cfg = en.RunConfig(eta=1.0, iterations=100)
    trace = en.run(p, identity_matrix(), cfg)
    assert trace.aborted is not None and "guard" in trace.aborted


def test_random_feasible_initialization(paper_logistic):
    cfg = en.RunConfig(eta=1.0, init="random_feasible", seed=4)
    states = en.initial_states(paper_logistic, cfg)
    assert states.x.shape == (100, 5)
    assert np.all(paper_logistic.constraint_values_many(states.x) <= 1e-12)
    assert np.all(np.linalg.norm(states.x, axis=1) <= 1.0 + 1e-12)
    assert np.any(states.x != 0.0)
    again = en.initial_states(paper_logistic, cfg)
    assert np.array_equal(states.x, again.x)


def test_centralized_matches_hand_rolled_loop():
    # independent implementation of the unregularized centralized update
    data = generate_dataset(10, 3, seed=7)
    p = build_logistic_problem(data, 0.1, 0.1)
    cfg = en.RunConfig(variant=en.CENTRALIZED_UNREGULARIZED, iterations=80,
                       record_every=20)
    trace = en.run_centralized_unregularized(p, cfg)

    a, b = data.features, data.labels
    lower, upper = -0.1, 0.1
    x = np.zeros(3)
    lam = np.zeros(6)
    for t in range(80):
        alpha = 1.0 / math.sqrt(t + 1.0)
        z = b * (a @ x)
        grad_f = a.T @ (b / (1.0 + np.exp(-z))) / 10.0
        grad_g = np.concatenate([-np.eye(3), np.eye(3)])
        g_val = np.concatenate([lower - x, x - upper])
        y = x - alpha * (grad_f + grad_g.T @ lam)
        gam = lam + alpha * g_val
        x = y * (1.0 / max(1.0, np.linalg.norm(y)))
        lam = np.maximum(gam, 0.0)
    assert_allclose(trace.final_states.x[0], x, atol=1e-12)
    assert_allclose(trace.final_states.lam[0], lam, atol=1e-12)


def test_centralized_requires_matching_variant(paper_logistic):
    with pytest.raises(en.EngineError):
        en.run_centralized_unregularized(paper_logistic,
                                         en.RunConfig(variant="deterministic"))
    with pytest.raises(en.EngineError):
        en.run(paper_logistic, identity_matrix(100),
               en.RunConfig(variant=en.CENTRALIZED_UNREGULARIZED))


def test_run_rejects_mismatched_matrix(paper_logistic):
    with pytest.raises(en.EngineError):
        en.run(paper_logistic, identity_matrix(3), en.RunConfig(eta=1.0))


def test_monitor_bounds_clean_run(paper_logistic, ws_matrix, paper_reference):
    cfg = en.RunConfig(eta=1.0, iterations=300, record_every=50,
                       monitor_bounds=True)
    trace = en.run(paper_logistic, ws_matrix, cfg, reference=paper_reference)
    assert trace.warnings == []


def test_missigned_dual_update_trips_lambda_bound(monkeypatch, paper_logistic,
                                                  ws_matrix):
    # mutation test: flipping the dual direction must be caught by the
    # multiplier-norm envelope
    original = en._deterministic_directions

    def flipped(p, x, lam, eta):
        gx, glam = original(p, x, lam, eta)
        return gx, -glam

    monkeypatch.setattr(en, "_deterministic_directions", flipped)
    cfg = en.RunConfig(eta=1.0, iterations=400, record_every=20,
                       monitor_bounds=True)
    trace = en.run(paper_logistic, ws_matrix, cfg)
    bound = metrics.lambda_norm_bound(paper_logistic, 1.0, 100)
    worst = max(r.sum_lambda_sq for r in trace.records)
    assert worst > bound or trace.aborted is not None
    assert trace.warnings or trace.aborted


def test_relative_error_drops_on_wide_box_instance(paper_dataset, ws_matrix):
    # consensus-limited regime: the box is slack inside the ball, so the
    # relative error at T = 1e4 falls well below a third of its t = 100 value
    from pdnet.problems import build_logistic_problem, reference_optimum
    p = build_logistic_problem(paper_dataset, 1.0, 1.0)
    ref = reference_optimum(p, iterations=100_000)
    cfg = en.RunConfig(eta=1.0, iterations=10_000, record_every=100, seed=1)
    trace = en.run(p, ws_matrix, cfg, reference=ref)
    by_t = {r.t: r for r in trace.records}
    assert by_t[10_000].eps < by_t[100].eps / 3.0


def test_trace_csv_layout(paper_logistic, ws_matrix, paper_reference):
    cfg = en.RunConfig(eta=1.0, iterations=20, record_every=10)
    trace = en.run(paper_logistic, ws_matrix, cfg, reference=paper_reference)
    lines = trace.to_csv_text().splitlines()
    assert lines[0].startswith(
        "t,eps_G,delta_G,max_lambda_norm,consensus_diameter,bound_margin_thm2")
    assert len(lines) == 1 + len(trace.records)
