"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to stream them).

The compare-mode artifacts are produced once per model through the CLI
entry point and shared across criteria.
"""

import time

import numpy as np
import pytest

import hopsim as hs
from hopsim.cli import SimulationConfig, load_csv, resolve_config, run
from tests.conftest import make_config

SEED = 2024


def _report(num, ok, detail):
    print(f"\n[ACCEPTANCE {num:02d}] {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


def _compare_run(tmp_factory, model, n, **overrides):
    out = tmp_factory.mktemp(f"cmp_{model}")
    cfg = resolve_config(SimulationConfig(model=model))
    cfg.mode = "compare"
    cfg.N = n
    cfg.seed = SEED
    cfg.output_dir = str(out)
    for key, val in overrides.items():
        setattr(cfg, key, val)
    cfg = resolve_config(cfg)
    t0 = time.perf_counter()
    assert run(cfg) == 0
    elapsed = time.perf_counter() - t0
    _, hop = load_csv(out / "hopping.csv")
    ref_meta, ref = load_csv(out / "reference.csv")
    rep_meta, rep = load_csv(out / "report.csv")
    return dict(hop=hop, ref=ref, ref_meta=ref_meta, report=rep,
                report_meta=rep_meta, elapsed=elapsed, out=out)


@pytest.fixture(scope="session")
def simple_compare(tmp_path_factory):
    return _compare_run(tmp_path_factory, "simple", 10000)


@pytest.fixture(scope="session")
def arctangent_compare(tmp_path_factory):
    return _compare_run(tmp_path_factory, "arctangent", 10000)


@pytest.fixture(scope="session")
def extended_compare(tmp_path_factory):
    return _compare_run(tmp_path_factory, "extended", 4000)


def test_criterion_01_simple_crossing(simple_compare):
    res = simple_compare
    final_err = float(res["report"]["abs_pop_error"][-1])
    ok = final_err <= 0.06
    assert _report(
        1, ok,
        f"simple crossing final |pop error| = {final_err:.4f} <= 0.06 "
        f"(compare runtime {res['elapsed']:.0f}s)",
    )


def test_criterion_02_arctangent_crossing(arctangent_compare):
    res = arctangent_compare
    final_err = float(res["report"]["abs_pop_error"][-1])
    mp_err = float(res["report"]["abs_mean_p_error_initial_level"][-1])
    ok = final_err <= 0.06 and mp_err <= 0.05
    assert _report(
        2, ok,
        f"arctangent final |pop error| = {final_err:.4f} <= 0.06, "
        f"initial-level momentum error = {mp_err:.4f} <= 0.05",
    )


def test_criterion_03_extended_failure_mode(extended_compare, tmp_path):
    res = extended_compare
    gated_constant = bool(np.all(res["hop"]["pop_plus"] == 1.0))
    ref_monotone = bool(np.all(np.diff(res["ref"]["pop_plus"]) <= 1e-10))
    flagged = res["report_meta"]["disagreement_above_0.1"] == "True"

    cfg = make_config("extended", N=1000, seed=SEED, hop_rule="unconstrained",
                      output_times=51, threads=2)
    series = hs.run_ensemble(hs.builtin("extended"), cfg)
    transfer_started = series.pop_plus[-1] < 1.0

    ok = gated_constant and ref_monotone and flagged and transfer_started
    assert _report(
        3, ok,
        f"extended: gated pop_plus constant 1 ({gated_constant}), reference "
        f"monotone decreasing ({ref_monotone}), disagreement >0.1 flagged "
        f"({flagged}), unconstrained final pop_plus = "
        f"{series.pop_plus[-1]:.3f} < 1 ({transfer_started})",
    )


def test_criterion_04_dual_two_regimes(tmp_path_factory):
    pot = hs.builtin("dual")
    # locate the two crossing passages with the center trajectory
    cfg1 = make_config("dual", seed=0)
    state = hs.TrajectoryState(q=cfg1.q0, p=cfg1.p0, level=cfg1.initial_level)

    class _NeverHop:
        def random(self):
            return 2.0

    _, events, _ = hs.propagate_trajectory(state, pot, cfg1, rng=_NeverHop())
    assert len(events) == 2
    t_mid = 0.5 * (events[0].t_star + events[1].t_star)

    res = _compare_run(tmp_path_factory, "dual", 10000)
    times = res["hop"]["t"]
    i_mid = int(np.argmin(np.abs(times - t_mid)))
    mid_diff = abs(res["hop"]["pop_plus"][i_mid] - res["ref"]["pop_plus"][i_mid])
    final_diff = abs(res["hop"]["pop_plus"][-1] - res["ref"]["pop_plus"][-1])
    ok = mid_diff <= 0.08
    assert _report(
        4, ok,
        f"dual: |pop diff| = {mid_diff:.4f} <= 0.08 at t_mid = "
        f"{times[i_mid]:.2f} (between passages at {events[0].t_star:.2f} and "
        f"{events[1].t_star:.2f}); recorded post-interference disagreement "
        f"at t_fin = {final_diff:.3f} (not asserted)",
    )


def test_criterion_05_lz_oracle(tmp_path):
    cfg = resolve_config(SimulationConfig(
        model="arctangent", mode="lz-check", output_dir=str(tmp_path),
    ))
    t0 = time.perf_counter()
    code = run(cfg)
    elapsed = time.perf_counter() - t0
    meta, cols = load_csv(tmp_path / "lz.csv")
    lam = np.pi * cols["eta"] ** 2 / cols["eps"]
    worst = float(cols["rel_error"].max())
    ok = (
        code == 0 and cols["eta"].size == 10
        and lam.min() == pytest.approx(0.2) and lam.max() == pytest.approx(3.0)
        and worst <= 0.02
    )
    assert _report(
        5, ok,
        f"LZ oracle sweep (10 points, exponent 0.2..3.0): max rel error "
        f"{worst:.5f} <= 0.02, runtime {elapsed:.1f}s",
    )


def test_criterion_06_hop_energy_identity():
    rng = np.random.default_rng(SEED)
    pots = [hs.builtin(name) for name in ("simple", "dual", "arctangent")]
    worst = 0.0
    checked = 0
    while checked < 1000:
        pot = pots[int(rng.integers(len(pots)))]
        q = float(rng.uniform(-3, 3))
        p = float(rng.uniform(0.3, 3.0) * rng.choice([-1.0, 1.0]))
        j = int(rng.choice([-1, 1]))
        g = float(pot.gap(q))
        if j == -1 and g / p ** 2 >= 1.0:
            continue
        p_out = hs.drift_momentum(q, p, j, pot)
        defect = (0.5 * p_out ** 2 + float(pot.lam(q, -j))) - (
            0.5 * p ** 2 + float(pot.lam(q, j))
        )
        worst = max(worst, abs(defect - g * g / (2 * p * p)))
        checked += 1
    ok = worst < 1e-12
    assert _report(
        6, ok,
        f"hop energy defect equals g^2/(2|p*|^2) on 1000 random inputs, "
        f"max deviation {worst:.2e} < 1e-12",
    )


def test_criterion_07_adiabatic_transport():
    pot = hs.builtin("arctangent", delta0=0.5)
    eps = 1e-3
    psi0 = hs.gaussian_packet(-4, 4, 2 ** 13, -1.0, 1.0, eps, +1, pot)
    res = hs.solve(psi0, pot, 2.0 / 2 ** 14, 2.0, np.linspace(0, 2, 41))
    transfer = max(d.n_minus for d in res.diagnostics)

    cfg = make_config("arctangent", N=500, seed=SEED, delta0=0.5,
                      output_times=21)
    series = hs.run_ensemble(pot, cfg)
    no_hops = bool(np.all(series.pop_plus == 1.0))
    ok = transfer < 2 * eps and no_hops
    assert _report(
        7, ok,
        f"adiabatic regime (delta0=0.5): reference transfer {transfer:.2e} "
        f"< 2e-3 and hopping attempts none ({no_hops})",
    )


def test_criterion_08_solver_unitarity_and_order():
    pot = hs.builtin("arctangent")
    psi0 = hs.gaussian_packet(-4, 4, 2 ** 13, -1.0, 1.0, 1e-3, +1, pot)
    res = hs.solve(psi0, pot, 2.0 / 2 ** 14, 2.0, np.linspace(0, 2, 3))
    drift = abs(res.final.norm_sq() - 1.0)

    finals = []
    times = np.linspace(0, 1.0, 3)
    for k in (10, 11, 12):
        r = hs.solve(psi0, pot, 1.0 / 2 ** k, 1.0, times)
        finals.append(r.diagnostics[-1].n_plus)
    order = float(np.log2(abs(finals[0] - finals[1]) / abs(finals[1] - finals[2])))
    ok = drift < 1e-10 and order >= 1.9
    assert _report(
        8, ok,
        f"norm drift {drift:.2e} < 1e-10 over 2^14 steps; observed Strang "
        f"order {order:.2f} >= 1.9 (three-resolution fit)",
    )


def test_criterion_09_worker_determinism(tmp_path, monkeypatch):
    cfgfile = tmp_path / "det.cfg"
    cfgfile.write_text(
        f"model=arctangent\nmode=hopping\nN=2000\nseed={SEED}\n"
        f"output_dir={tmp_path / 'out'}\n",
        encoding="utf-8",
    )
    blobs = []
    for workers in (1, 4, 16):
        monkeypatch.setenv("HOPSIM_THREADS", str(workers))
        from hopsim.cli import main
        assert main(["run", str(cfgfile)]) == 0
        blobs.append((tmp_path / "out" / "hopping.csv").read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    assert _report(
        9, ok,
        f"hopping.csv byte-identical for worker counts 1, 4, 16 "
        f"({len(blobs[0])} bytes)",
    )


def test_criterion_10_probabilistic_vs_branching():
    lines = []
    ok = True
    for model in ("simple", "arctangent"):
        pot = hs.builtin(model)
        cfg = make_config(model, N=100000, seed=SEED, output_times=51,
                          threads=2)
        sp = hs.run_ensemble(pot, cfg)
        sb = hs.run_branching(pot, cfg)
        diff = abs(sp.pop_plus[-1] - sb.pop_plus[-1])
        bound = 3 * float(np.hypot(sp.stderr_pop[-1], sb.stderr_pop[-1]))
        ok = ok and diff <= bound
        lines.append(f"{model}: |{sp.pop_plus[-1]:.4f} - "
                     f"{sb.pop_plus[-1]:.4f}| = {diff:.4f} <= {bound:.4f}")
    assert _report(10, ok, "probabilistic vs branching at N=1e5: "
                   + "; ".join(lines))
