import math

import numpy as np
import pytest

from heavybrw.branching import PopulationCapExceeded, power_mean
from heavybrw.kernels import BACKENDS
from heavybrw.pointproc import PointMeasure, counts_in, ks_two_sample
from heavybrw.rng import stream
from heavybrw.simulator import (SimulationSetup, estimate_W, finish_replica, grow, one_jump_events,
                                run_replica)
from conftest import (binary, one_three, pareto_axes, pareto_ray, two_type_asymmetric,
                      two_type_sparse, zero_model)


# --- oracles -----------------------------------------------------------------

def walk_ancestry(history, leaf):
    """Indices ``(generation, index)`` on the path from the root to ``leaf`` (root excluded)."""
    path = []
    g, i = len(history) - 1, leaf
    while g > 0:
        path.append((g, i))
        i = int(history[g].parent_index[i])
        g -= 1
    return path[::-1]


def brute_force_events(history, Q, bn, record, exceed):
    """Big-jump multiplicities and per-type exceedance maxima by walking every leaf."""
    counts, exceed_max = {}, np.zeros(Q, dtype=np.int64)
    last = history[-1]
    for leaf in range(last.size):
        per_type = np.zeros(Q, dtype=np.int64)
        for g, i in walk_ancestry(history, leaf):
            d, q = history[g].displacements[i], history[g].types[i]
            if q == Q - 1 and abs(d) > record:
                counts[(g, i)] = counts.get((g, i), 0) + 1
            if abs(d) > exceed:
                per_type[q] += 1
        exceed_max = np.maximum(exceed_max, per_type)
    vals = [history[g].displacements[i] / bn for g, i in counts]
    return PointMeasure.from_points(vals, list(counts.values())), exceed_max


def path_sum_oracle(alpha, beta, n, size, rng):
    """Sum of ``n`` independent two-sided Pareto steps, drawn directly with numpy."""
    mag = rng.pareto(alpha, size=(size, n)) + 1.0
    sign = np.where(rng.random((size, n)) < beta, 1.0, -1.0)
    return (sign * mag).sum(axis=1)


# --- structure ---------------------------------------------------------------

@pytest.mark.parametrize("models", [(one_three, lambda: pareto_axes(1.0, 0.5)),
                                    (two_type_asymmetric, lambda: pareto_axes(1.0, 0.5, Q=2)),
                                    (one_three, lambda: pareto_ray((1.0, 0.5, 0.25), 1.0, 0.7))])
@pytest.mark.parametrize("seed", range(4))
def test_event_forest_matches_brute_force(models, seed):
    bm, dm = models[0](), models[1]()
    setup = SimulationSetup(bm, dm, eta=0.05, theta=0.5)
    n = 6
    root, state, hist = grow(setup, n, stream(seed, "forest"), keep_history=True)
    rep = finish_replica(setup, n, root, state)
    thr = setup.thresholds(n)
    tilde, exceed_max = brute_force_events(hist, bm.Q, rep.bn, thr.record, thr.exceed)
    assert rep.tilde == tilde
    np.testing.assert_array_equal(rep.exceed_max, exceed_max)


def test_positions_are_path_sums():
    setup = SimulationSetup(two_type_asymmetric(), pareto_axes(1.0, 0.5, Q=2))
    _, state, hist = grow(setup, 5, stream(1, "paths"), keep_history=True)
    for leaf in range(0, state.size, 7):
        s = 0.0
        for g, i in walk_ancestry(hist, leaf):
            s += hist[g].displacements[i]
        assert state.positions[leaf] == pytest.approx(s, rel=1e-12, abs=1e-12)


def test_binary_tree_counts_and_w():
    rep = run_replica(SimulationSetup(binary(), pareto_axes()), 9, stream(0, "bin"))
    assert rep.total == 512 and rep.w_hat == 1.0 and rep.points.total_mass == 512


def test_tiny_eta_counts_every_ancestor():
    # every displacement is an event, so each leaf is counted once per generation
    setup = SimulationSetup(one_three(), pareto_axes(1.0, 0.5), eta=1e-12)
    rep = run_replica(setup, 5, stream(3, "eta"))
    assert rep.tilde.total_mass == 5 * rep.total


def test_zero_displacements():
    rep = run_replica(SimulationSetup(one_three(), zero_model()), 6, stream(0, "zero"))
    assert np.all(rep.points.locations == 0.0) and len(rep.tilde) == 0
    assert not one_jump_events(rep).any()


def test_ray_block_overflow_rejected():
    from heavybrw.branching import BranchingModel, OffspringLaw
    bm = BranchingModel(OffspringLaw.deterministic([4]))
    with pytest.raises(ValueError):
        run_replica(SimulationSetup(bm, pareto_ray((1.0, 0.5))), 2, stream(0, "ray"))


def test_population_cap():
    setup = SimulationSetup(one_three(), pareto_axes(), population_cap=100)
    with pytest.raises(PopulationCapExceeded):
        run_replica(setup, 12, stream(0, "cap"))


def test_theta_mismatch_rejected():
    rep = run_replica(SimulationSetup(one_three(), pareto_axes()), 4, stream(0, "t"))
    with pytest.raises(ValueError):
        one_jump_events(rep, theta=0.7)


def test_same_stream_same_replica():
    setup = SimulationSetup(two_type_sparse(), pareto_axes(0.5, 0.5, Q=2))
    a = run_replica(setup, 8, stream(5, "rep", 8, 3))
    b = run_replica(setup, 8, stream(5, "rep", 8, 3))
    assert a.points == b.points and a.tilde == b.tilde and a.total == b.total


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
@pytest.mark.parametrize("models", [(two_type_sparse, lambda: pareto_axes(0.5, 0.5, Q=2)),
                                    (one_three, lambda: pareto_ray((1.0, 0.5, 0.25)))])
def test_backends_agree(models):
    out = {}
    for b in ("python", "cython"):
        setup = SimulationSetup(models[0](), models[1](), backend=b)
        out[b] = [run_replica(setup, 10, stream(2, "backend", i)) for i in range(20)]
    for a, c in zip(out["python"], out["cython"]):
        # libm and numpy powers may differ in the last ulp
        scale = np.abs(a.points.locations).max()
        assert a.total == c.total
        np.testing.assert_allclose(a.points.locations, c.points.locations, rtol=0, atol=1e-12 * scale)
        np.testing.assert_array_equal(a.points.multiplicities, c.points.multiplicities)
        np.testing.assert_array_equal(a.tilde.multiplicities, c.tilde.multiplicities)
        np.testing.assert_array_equal(a.exceed_max, c.exceed_max)


# --- distributional checks ---------------------------------------------------

def test_mean_count_above_one_matches_path_oracle():
    alpha, beta, n, reps = 1.0, 0.5, 6, 4000
    setup = SimulationSetup(one_three(), pareto_axes(alpha, beta))
    c = np.array([counts_in(run_replica(setup, n, stream(11, "count", i)).points, 1.0)
                  for i in range(reps)], dtype=float)
    s = path_sum_oracle(alpha, beta, n, 1_000_000, np.random.Generator(np.random.Philox(4)))
    bn = setup.bn(n)
    p = (s > bn).mean()
    want = 2.0 ** n * p
    se = math.sqrt(c.var(ddof=1) / reps + (2.0 ** n) ** 2 * p * (1 - p) / s.size)
    assert abs(c.mean() - want) < 3 * se, (c.mean(), want, se)


def test_per_type_means_match_matrix_power():
    bm = two_type_asymmetric()
    setup = SimulationSetup(bm, pareto_axes(1.0, 0.5, Q=2))
    n, reps = 6, 3000
    tc = np.array([run_replica(setup, n, stream(12, "types", i)).type_counts for i in range(reps)],
                  dtype=float)
    # the root type is drawn from the root distribution
    want = bm.root_distribution @ power_mean(bm.offspring.mean_matrix(), n)
    se = tc.std(axis=0, ddof=1) / math.sqrt(reps)
    assert np.all(np.abs(tc.mean(axis=0) - want) < 3 * se)


def test_estimate_W_means():
    bm = two_type_asymmetric()
    M = bm.offspring.mean_matrix()
    rho = bm.spectral().rho
    for p in range(2):
        w = estimate_W(bm, 8, 5000, stream(13, "w", p), root_type=p)
        want = power_mean(M, 8)[p].sum() / rho ** 8
        assert abs(w.mean() - want) < 3 * w.std(ddof=1) / math.sqrt(w.size)


def test_estimate_W_depth_guard():
    with pytest.raises(ValueError):
        estimate_W(one_three(), 21, 10, stream(0, "g"))


def test_w_hat_law_matches_estimate_W():
    setup = SimulationSetup(one_three(), pareto_axes())
    w1 = [run_replica(setup, 8, stream(14, "what", i)).w_hat for i in range(10_000)]
    w2 = estimate_W(one_three(), 8, 10_000, stream(14, "west"))
    assert ks_two_sample(w1, w2) < 0.03


def test_pure_env_selects_fallback():
    import os
    import subprocess
    import sys
    env = {**os.environ, "HEAVYBRW_PURE": "1"}
    out = subprocess.run([sys.executable, "-c", "from heavybrw.kernels import DEFAULT; print(DEFAULT)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
