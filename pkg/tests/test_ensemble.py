import numpy as np
import pytest

from hopsim import (
    BranchOverflow,
    WignerGaussian,
    builtin,
    estimate_observable,
    run_branching,
    run_ensemble,
    sample_wigner,
)
from tests.conftest import make_config


def test_sample_wigner_moments():
    eps = 1e-3
    wg = WignerGaussian(center_q=-1.0, center_p=1.0, eps=eps)
    pts = sample_wigner(wg, 100000, seed=9)
    sig = np.sqrt(eps / 2)
    bound = 4 * sig / np.sqrt(100000)
    assert abs(pts[:, 0].mean() + 1.0) < bound
    assert abs(pts[:, 1].mean() - 1.0) < bound
    assert abs(pts[:, 0].var() / (eps / 2) - 1) < 0.05
    assert abs(pts[:, 1].var() / (eps / 2) - 1) < 0.05


def test_sample_wigner_deterministic():
    wg = WignerGaussian(0.0, 0.0, 1e-2)
    a = sample_wigner(wg, 1, seed=123)
    b = sample_wigner(wg, 1, seed=123)
    assert np.array_equal(a, b)
    # index substreams: the first points of longer draws are unchanged
    c = sample_wigner(wg, 5, seed=123)
    assert np.array_equal(c[:1], a)


def test_initial_record_matches_start():
    cfg = make_config("arctangent", N=500, seed=3, output_times=11, threads=1)
    series = run_ensemble(builtin("arctangent"), cfg)
    assert series.pop_plus[0] == 1.0 and series.pop_minus[0] == 0.0
    assert abs(series.mean_q_plus[0] - cfg.q0) < 4 * series.stderr_mean_q_plus[0]
    assert abs(series.mean_p_plus[0] - cfg.p0) < 4 * series.stderr_mean_p_plus[0]


def test_populations_sum_to_one():
    cfg = make_config("arctangent", N=300, seed=5, output_times=21)
    series = run_ensemble(builtin("arctangent"), cfg)
    np.testing.assert_allclose(series.pop_plus + series.pop_minus, 1.0, atol=1e-14)


def test_extended_gated_population_constant():
    cfg = make_config("extended", N=200, seed=2, output_times=21)
    series = run_ensemble(builtin("extended"), cfg)
    assert np.all(series.pop_plus == 1.0)
    assert series.n_hops_hist.tolist() == [200]


def test_arctangent_final_population():
    cfg = make_config("arctangent", N=10000, seed=17, output_times=21, threads=2)
    series = run_ensemble(builtin("arctangent"), cfg)
    # ensemble-mean transition rate from the branching run is 0.13760
    expect = 1.0 - 0.13760
    noise = 4 * series.stderr_pop[-1]
    assert abs(series.pop_plus[-1] - expect) < noise + 0.002


def test_seed_changes_results():
    cfg1 = make_config("arctangent", N=400, seed=1, output_times=6)
    cfg2 = make_config("arctangent", N=400, seed=2, output_times=6)
    s1 = run_ensemble(builtin("arctangent"), cfg1)
    s2 = run_ensemble(builtin("arctangent"), cfg2)
    assert not np.array_equal(s1.final_q, s2.final_q)


def test_thread_count_invariance():
    pot = builtin("arctangent")
    base = None
    for threads in (1, 4, 16):
        cfg = make_config("arctangent", N=300, seed=6, output_times=11,
                          threads=threads)
        series = run_ensemble(pot, cfg)
        key = (series.pop_plus.tobytes(), series.final_q.tobytes(),
               series.final_p.tobytes())
        if base is None:
            base = key
        assert key == base


def test_branching_single_passage():
    cfg = make_config("arctangent", N=1, seed=4, output_times=6)
    series = run_branching(builtin("arctangent"), cfg)
    assert series.final_weight.size == 2
    assert series.final_weight.sum() == pytest.approx(1.0, abs=1e-12)
    assert sorted(series.final_level.tolist()) == [-1, 1]
    # weights are (1-T, T) for this sample's crossing rate
    t = series.final_weight[series.final_level == -1][0]
    assert 0.12 < t < 0.16


def test_branching_extended_single_leaf():
    cfg = make_config("extended", N=3, seed=4, output_times=6)
    series = run_branching(builtin("extended"), cfg)
    assert series.final_weight.size == 3
    assert np.all(series.final_weight == 1.0)
    assert np.all(series.pop_plus == 1.0)


def test_branching_dual_four_leaves():
    cfg = make_config("dual", N=1, seed=4, output_times=6)
    series = run_branching(builtin("dual"), cfg)
    assert series.final_weight.size == 4
    assert series.final_weight.sum() == pytest.approx(1.0, abs=1e-12)


def test_branching_weight_conservation_series():
    cfg = make_config("dual", N=50, seed=10, output_times=26)
    series = run_branching(builtin("dual"), cfg)
    np.testing.assert_allclose(series.pop_plus + series.pop_minus, 1.0,
                               atol=1e-12)


def test_branch_overflow():
    cfg = make_config("dual", N=2, seed=4, output_times=6, max_branches=2)
    with pytest.raises(BranchOverflow):
        run_branching(builtin("dual"), cfg)


def test_probabilistic_matches_branching():
    pot = builtin("arctangent")
    cfgp = make_config("arctangent", N=20000, seed=21, output_times=6, threads=2)
    cfgb = make_config("arctangent", N=2000, seed=21, output_times=6)
    sp = run_ensemble(pot, cfgp)
    sb = run_branching(pot, cfgb)
    combined = np.hypot(sp.stderr_pop[-1], sb.stderr_pop[-1])
    assert abs(sp.pop_plus[-1] - sb.pop_plus[-1]) < 3 * combined + 1e-3


def test_transversality_errors_excluded(monkeypatch):
    # slow samples turn around exactly at their local gap minimum: the
    # refined |p*| underflows the transversality floor, the trajectory is
    # flagged and dropped from the statistics (same count on both backends)
    pot = builtin("simple")
    counts = []
    for backend in ("numba", "numpy"):
        monkeypatch.setenv("HOPSIM_BACKEND", backend)
        cfg = make_config("simple", N=32, seed=12, eps=1e-3, q0=-1.0,
                          p0=0.05, t_fin=40.0, dt=0.005, output_times=6,
                          threads=2)
        series = run_ensemble(pot, cfg)
        counts.append(series.n_errors)
        assert 0 < series.n_errors < 32
        np.testing.assert_allclose(series.pop_plus + series.pop_minus, 1.0,
                                   atol=1e-14)
    assert counts[0] == counts[1]


def test_hop_draw_overflow_excluded():
    # samples trapped in the shallow upper-surface well recross the gap
    # minimum every half period until the hop-draw budget overflows
    pot = builtin("simple")
    cfg = make_config("simple", N=8, seed=12, eps=1e-3, q0=-1.0, p0=0.05,
                      initial_level=1, t_fin=2700.0, dt=0.01,
                      output_times=6, threads=2)
    series = run_ensemble(pot, cfg)
    assert 0 < series.n_errors < 8
    np.testing.assert_allclose(series.pop_plus + series.pop_minus, 1.0,
                               atol=1e-14)


def test_all_errored_raises():
    from hopsim import DiabaticPotential, HopsimError

    arr = lambda q: np.asarray(q, dtype=float)
    d0 = 0.03
    pot = DiabaticPotential(  # custom fields force the fallback engine
        alpha=lambda q: 0.0 * arr(q),
        beta=lambda q: 0.16 * np.tanh(arr(q)),
        gamma=lambda q: d0 + 0.0 * arr(q),
        d_alpha=lambda q: 0.0 * arr(q),
        d_beta=lambda q: 0.16 / np.cosh(arr(q)) ** 2,
        d_gamma=lambda q: 0.0 * arr(q),
    )
    cfg = make_config("simple", N=8, seed=12, eps=1e-3, q0=-0.6, p0=0.05,
                      initial_level=1, t_fin=240.0, dt=0.01,
                      output_times=6, threads=2)
    with pytest.raises(HopsimError, match="all trajectories errored"):
        run_ensemble(pot, cfg)


def test_estimate_observable_constants():
    q = np.array([0.0, 1.0, 2.0, 3.0])
    p = np.array([1.0, 1.0, 2.0, 2.0])
    level = np.array([1, 1, -1, -1])
    one = lambda q, p: np.ones_like(q)
    est = estimate_observable(q, p, level, one, one)
    assert est.value == pytest.approx(2.0)
    est = estimate_observable(q, p, level, lambda q, p: p, None)
    assert est.value == pytest.approx(1.0)


def test_estimate_observable_box_indicator():
    rng = np.random.default_rng(0)
    q = rng.uniform(-1, 1, 1000)
    p = rng.uniform(-1, 1, 1000)
    level = np.where(rng.random(1000) < 0.5, 1, -1)
    box = lambda q, p: ((np.abs(q) < 0.5) & (np.abs(p) < 0.5)).astype(float)
    est = estimate_observable(q, p, level, box, None)
    mask = level == 1
    frac = box(q[mask], p[mask]).mean()
    assert est.value == pytest.approx(frac)


def test_estimate_observable_empty_level():
    q = np.array([0.0, 1.0])
    p = np.array([1.0, 1.0])
    level = np.array([1, 1])
    est = estimate_observable(q, p, level, lambda q, p: q, lambda q, p: q)
    assert est.empty_level == -1
    assert est.value == pytest.approx(0.5)


def test_estimate_observable_jackknife_matches_naive():
    # for a single-level mean the jackknife equals std/sqrt(n)
    rng = np.random.default_rng(1)
    q = rng.normal(size=400)
    p = rng.normal(size=400)
    level = np.ones(400, dtype=int)
    est = estimate_observable(q, p, level, lambda q, p: q, None)
    assert est.stderr == pytest.approx(q.std(ddof=1) / np.sqrt(400), rel=1e-12)
