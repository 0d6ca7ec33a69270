"""Experiment runner: flat key=value configs, simulation dispatch, CSV output.

Usage:
    hopsim run <config> [--mode M] [--seed S] [--out DIR]

Modes: hopping, branching, reference, compare, lz-check.  Every output file
embeds the fully resolved configuration as '#' comment lines; floats are
printed with 17 significant digits so reruns are byte-comparable.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from dataclasses import dataclass, field, fields as dc_fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import ensemble, lzmodel, reference
from .errors import HopsimError, ParseError, ValidationError
from .potentials import builtin, builtin_names, coefficient_names

__all__ = ["SimulationConfig", "parse_config", "run", "main", "load_csv"]

_MODES = ("hopping", "branching", "reference", "compare", "lz-check")
_HOP_RULES = ("gated", "unconstrained")
_LEVELS = {"plus": 1, "minus": -1, "+1": 1, "-1": -1, "1": 1}


@dataclass
class SimulationConfig:
    """Fully resolved run parameters.

    Built from a model's registry defaults overlaid with config-file keys;
    None in the dataclass defaults means "take it from the model".
    """

    model: str = "simple"
    eps: Optional[float] = None
    delta0: Optional[float] = None
    q0: Optional[float] = None
    p0: Optional[float] = None
    initial_level: Optional[int] = None
    N: int = 10000
    dt: Optional[float] = None
    t_fin: Optional[float] = None
    seed: int = 1234
    mode: str = "compare"
    hop_rule: str = "gated"
    r_exponent: float = 0.125
    output_dir: str = "."
    output_times: int = 200
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    max_branches: int = 64
    log_hops: bool = False
    # reference-solver grid controls (model defaults when None)
    grid_a: Optional[float] = None
    grid_b: Optional[float] = None
    grid_n: Optional[int] = None
    ref_dt: Optional[float] = None
    snapshots: str = ""
    # lz-check sweep controls
    lz_eps: float = 0.01
    lz_points: int = 10
    lz_lambda_min: float = 0.2
    lz_lambda_max: float = 3.0
    lz_tol: float = 0.02
    # model coefficient overrides, e.g. param_a=0.02
    params: dict = field(default_factory=dict)

    def resolved_text(self) -> str:
        parts = []
        for f in dc_fields(self):
            if f.name == "params":
                for key in sorted(self.params):
                    parts.append(f"param_{key}={self.params[key]!r}")
            else:
                parts.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(parts)

    def sha256(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}

_FIELD_PARSERS = {
    "model": str,
    "eps": float,
    "delta0": float,
    "q0": float,
    "p0": float,
    "N": int,
    "dt": float,
    "t_fin": float,
    "seed": int,
    "mode": str,
    "hop_rule": str,
    "r_exponent": float,
    "output_dir": str,
    "output_times": int,
    "threads": int,
    "max_branches": int,
    "grid_a": float,
    "grid_b": float,
    "grid_n": int,
    "ref_dt": float,
    "snapshots": str,
    "lz_eps": float,
    "lz_points": int,
    "lz_lambda_min": float,
    "lz_lambda_max": float,
    "lz_tol": float,
}


def parse_config(path) -> SimulationConfig:
    """Parse a flat key=value file (UTF-8, '#' comments) and apply model
    defaults.  Raises ParseError (with line number) or ValidationError."""
    raw = {}
    params = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"expected key=value, got {stripped!r}", lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key.startswith("param_"):
            try:
                params[key[len("param_"):]] = float(value)
            except ValueError:
                raise ParseError(f"coefficient {key!r} needs a number", lineno)
            continue
        if key == "initial_level":
            if value.lower() not in _LEVELS:
                raise ParseError(f"initial_level must be plus or minus", lineno)
            raw[key] = _LEVELS[value.lower()]
            continue
        if key == "log_hops":
            if value.lower() not in _BOOL:
                raise ParseError("log_hops must be true or false", lineno)
            raw[key] = _BOOL[value.lower()]
            continue
        if key not in _FIELD_PARSERS:
            raise ParseError(f"unknown key {key!r}", lineno)
        try:
            raw[key] = _FIELD_PARSERS[key](value)
        except ValueError:
            raise ParseError(f"bad value for {key!r}: {value!r}", lineno)
    raw["params"] = params
    return resolve_config(SimulationConfig(**raw))


def resolve_config(cfg: SimulationConfig) -> SimulationConfig:
    """Fill model-dependent defaults and validate every field."""
    if cfg.model not in builtin_names():
        raise ValidationError("model", f"unknown model {cfg.model!r}")
    for key in cfg.params:
        if key not in coefficient_names(cfg.model):
            raise ValidationError(
                f"param_{key}", f"model {cfg.model!r} has no such coefficient"
            )
    pot = builtin(cfg.model, delta0=cfg.delta0, **cfg.params)
    d = pot.defaults
    cfg = replace(
        cfg,
        eps=d.eps if cfg.eps is None else cfg.eps,
        delta0=pot.delta0,
        q0=d.q0 if cfg.q0 is None else cfg.q0,
        p0=d.p0 if cfg.p0 is None else cfg.p0,
        initial_level=(d.initial_level if cfg.initial_level is None
                       else cfg.initial_level),
        dt=d.dt if cfg.dt is None else cfg.dt,
        t_fin=d.t_fin if cfg.t_fin is None else cfg.t_fin,
        grid_a=d.grid_a if cfg.grid_a is None else cfg.grid_a,
        grid_b=d.grid_b if cfg.grid_b is None else cfg.grid_b,
        grid_n=d.grid_n if cfg.grid_n is None else cfg.grid_n,
    )
    if cfg.ref_dt is None:
        cfg = replace(cfg, ref_dt=cfg.t_fin / 2 ** 14)

    def positive(name):
        val = getattr(cfg, name)
        if not (isinstance(val, (int, float)) and val > 0):
            raise ValidationError(name, f"must be positive, got {val!r}")

    for name in ("eps", "delta0", "dt", "t_fin", "ref_dt", "lz_eps"):
        positive(name)
    if cfg.N < 1:
        raise ValidationError("N", f"must be >= 1, got {cfg.N}")
    if cfg.mode not in _MODES:
        raise ValidationError("mode", f"must be one of {_MODES}")
    if cfg.hop_rule not in _HOP_RULES:
        raise ValidationError("hop_rule", f"must be one of {_HOP_RULES}")
    if cfg.initial_level not in (-1, 1):
        raise ValidationError("initial_level", "must be plus or minus")
    if cfg.output_times < 2:
        raise ValidationError("output_times", "need at least 2 output times")
    if cfg.threads < 1:
        raise ValidationError("threads", "must be >= 1")
    if cfg.max_branches < 2:
        raise ValidationError("max_branches", "must be >= 2")
    if cfg.grid_n < 2 or cfg.grid_n & (cfg.grid_n - 1):
        raise ValidationError("grid_n", "must be a power of two")
    if not cfg.grid_a < cfg.grid_b:
        raise ValidationError("grid_a", "need grid_a < grid_b")
    if cfg.lz_points < 1:
        raise ValidationError("lz_points", "must be >= 1")
    if not 0 < cfg.lz_lambda_min <= cfg.lz_lambda_max:
        raise ValidationError("lz_lambda_min", "need 0 < min <= max")
    if not 0.0 < cfg.r_exponent < 0.5:
        raise ValidationError("r_exponent", "must lie in (0, 0.5)")
    return cfg


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return f"{x:.17g}"


def _write_csv(path: Path, cfg: SimulationConfig, header, rows, extra_comments=()):
    lines = []
    for comment in extra_comments:
        lines.append(f"# {comment}")
    lines.append(f"# config_sha256={cfg.sha256()}")
    for cfg_line in cfg.resolved_text().splitlines():
        lines.append(f"# {cfg_line}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_csv(path):
    """Read back a CSV written by this module.

    Returns (meta, columns): meta maps the '#' comment keys to their string
    values, columns maps header names to float arrays.
    """
    meta = {}
    names = None
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        if names is None:
            names = line.split(",")
            continue
        rows.append([float(x) for x in line.split(",")])
    data = np.asarray(rows)
    return meta, {name: data[:, i] for i, name in enumerate(names)}


_SERIES_HEADER = [
    "t", "pop_plus", "pop_minus",
    "mean_q_plus", "mean_p_plus", "mean_q_minus", "mean_p_minus",
]
_STDERR_HEADER = [
    "stderr_pop", "stderr_mean_q_plus", "stderr_mean_p_plus",
    "stderr_mean_q_minus", "stderr_mean_p_minus",
]


def _series_rows(series: ensemble.EnsembleSeries, with_stderr: bool):
    cols = [
        series.times, series.pop_plus, series.pop_minus,
        series.mean_q_plus, series.mean_p_plus,
        series.mean_q_minus, series.mean_p_minus,
    ]
    if with_stderr:
        cols += [
            series.stderr_pop,
            series.stderr_mean_q_plus, series.stderr_mean_p_plus,
            series.stderr_mean_q_minus, series.stderr_mean_p_minus,
        ]
    return np.column_stack(cols)


def _reference_rows(diags):
    return [
        (d.t, d.n_plus, d.n_minus, d.mean_q_plus, d.mean_p_plus,
         d.mean_q_minus, d.mean_p_minus)
        for d in diags
    ]


# ---------------------------------------------------------------------------
# Run modes
# ---------------------------------------------------------------------------

def _run_reference(cfg: SimulationConfig, pot, converge: bool):
    """Solve on the grid; with converge=True halve dt until population
    curves at (dt, dt/2) agree below 1e-4, and return the finer run."""
    times = np.linspace(0.0, cfg.t_fin, cfg.output_times)
    psi0 = reference.gaussian_packet(
        cfg.grid_a, cfg.grid_b, cfg.grid_n,
        cfg.q0, cfg.p0, cfg.eps, cfg.initial_level, pot,
    )
    dt = cfg.ref_dt
    result = reference.solve(psi0, pot, dt, cfg.t_fin, times)
    gate = float("nan")
    if converge:
        for _ in range(3):
            finer = reference.solve(psi0, pot, dt / 2.0, cfg.t_fin, times)
            gate = max(
                abs(a.n_plus - b.n_plus)
                for a, b in zip(result.diagnostics, finer.diagnostics)
            )
            result = finer
            dt = dt / 2.0
            if gate < 1e-4:
                break
    return result, dt, gate


def _ensemble_series(cfg: SimulationConfig, pot):
    threads_env = os.environ.get("HOPSIM_THREADS", "").strip()
    if threads_env:
        cfg = replace(cfg, threads=max(1, int(threads_env)))
    if cfg.mode == "branching":
        return ensemble.run_branching(pot, cfg)
    return ensemble.run_ensemble(pot, cfg)


def run(cfg: SimulationConfig) -> int:
    """Execute one configured run, writing CSVs into cfg.output_dir."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pot = builtin(cfg.model, delta0=cfg.delta0, **cfg.params)

    if cfg.mode == "lz-check":
        return _run_lz_check(cfg, out)

    if cfg.mode in ("hopping", "branching"):
        series = _ensemble_series(cfg, pot)
        name = "hopping.csv" if cfg.mode == "hopping" else "branching.csv"
        # no wall-clock comments here: reruns at a fixed seed must be
        # byte-identical
        _write_csv(
            out / name, cfg, _SERIES_HEADER + _STDERR_HEADER,
            _series_rows(series, with_stderr=True),
            extra_comments=[
                f"n_errors={series.n_errors}",
                f"n_frustrated={series.n_frustrated}",
                f"n_hops_hist={list(series.n_hops_hist)}",
            ],
        )
        if cfg.log_hops and series.events is not None:
            rows = [
                (idx, t, q, p, g, rate, int(acc), int(frus))
                for idx, t, q, p, g, rate, acc, frus in series.events
            ]
            _write_csv(
                out / "events.csv", cfg,
                ["trajectory", "t_star", "q_star", "p_star", "gap",
                 "rate", "accepted", "frustrated"],
                rows,
            )
        return 0

    if cfg.mode == "reference":
        result, dt_used, _ = _run_reference(cfg, pot, converge=False)
        _write_csv(
            out / "reference.csv", cfg, _SERIES_HEADER,
            _reference_rows(result.diagnostics),
            extra_comments=[
                f"ref_dt_used={dt_used!r}",
                f"boundary_leak={result.boundary_leak}",
            ],
        )
        snap_times = [float(s) for s in cfg.snapshots.split(",") if s.strip()]
        if snap_times:
            res2 = reference.solve(
                reference.gaussian_packet(
                    cfg.grid_a, cfg.grid_b, cfg.grid_n,
                    cfg.q0, cfg.p0, cfg.eps, cfg.initial_level, pot,
                ),
                pot, dt_used, cfg.t_fin,
                np.linspace(0.0, cfg.t_fin, cfg.output_times),
                snapshot_times=snap_times,
            )
            for i, snap in enumerate(res2.snapshots):
                rows = np.column_stack([
                    snap.q,
                    snap.values[:, 0].real, snap.values[:, 0].imag,
                    snap.values[:, 1].real, snap.values[:, 1].imag,
                ])
                _write_csv(
                    out / f"snapshot_{i}.csv", cfg,
                    ["q", "re_up", "im_up", "re_down", "im_down"],
                    rows, extra_comments=[f"t={snap.t!r}"],
                )
        return 0

    # compare
    t0 = time.perf_counter()
    series = _ensemble_series(cfg, pot)
    t_hop = time.perf_counter() - t0
    t0 = time.perf_counter()
    result, dt_used, gate = _run_reference(cfg, pot, converge=True)
    t_ref = time.perf_counter() - t0
    _write_csv(
        out / "hopping.csv", cfg, _SERIES_HEADER + _STDERR_HEADER,
        _series_rows(series, with_stderr=True),
    )
    _write_csv(
        out / "reference.csv", cfg, _SERIES_HEADER,
        _reference_rows(result.diagnostics),
        extra_comments=[
            f"ref_dt_used={dt_used!r}",
            f"convergence_gate={gate!r}",
            f"boundary_leak={result.boundary_leak}",
        ],
    )
    diags = result.diagnostics
    ref_pop_plus = np.array([d.n_plus for d in diags])
    pop_err = np.abs(series.pop_plus - ref_pop_plus)
    lev = cfg.initial_level
    hop_mp = series.mean_p_plus if lev == 1 else series.mean_p_minus
    ref_mp = np.array([
        d.mean_p_plus if lev == 1 else d.mean_p_minus for d in diags
    ])
    mp_err = np.abs(hop_mp - ref_mp)
    max_err = float(np.nanmax(pop_err))
    final_err = float(pop_err[-1])
    final_mp_err = float(mp_err[-1])
    flag = max_err > 0.1
    _write_csv(
        out / "report.csv", cfg,
        ["t", "abs_pop_error", "abs_mean_p_error_initial_level"],
        np.column_stack([series.times, pop_err, mp_err]),
        extra_comments=[
            f"hopping_config_sha256={cfg.sha256()}",
            f"reference_config_sha256={cfg.sha256()}",
            f"max_pop_error={max_err!r}",
            f"final_pop_error={final_err!r}",
            f"final_mean_p_error_initial_level={final_mp_err!r}",
            f"disagreement_above_0.1={flag}",
            f"runtime_hopping_seconds={t_hop:.3f}",
            f"runtime_reference_seconds={t_ref:.3f}",
        ],
    )
    return 0


def _run_lz_check(cfg: SimulationConfig, out: Path) -> int:
    lambdas = np.linspace(cfg.lz_lambda_min, cfg.lz_lambda_max, cfg.lz_points)
    rows = []
    worst = 0.0
    for lam in lambdas:
        eta = float(np.sqrt(lam * cfg.lz_eps / np.pi))
        t_formula = lzmodel.formula_transition(eta, cfg.lz_eps)
        t_measured, s_used = lzmodel.converged_transition(eta, cfg.lz_eps)
        rel = abs(t_measured - t_formula) / t_formula
        worst = max(worst, rel)
        rows.append((eta, cfg.lz_eps, t_formula, t_measured, rel, s_used))
    ok = worst <= cfg.lz_tol
    _write_csv(
        out / "lz.csv", cfg,
        ["eta", "eps", "T_formula", "T_measured", "rel_error", "s_max"],
        rows,
        extra_comments=[
            f"max_rel_error={worst!r}",
            f"tolerance={cfg.lz_tol!r}",
            f"pass={ok}",
        ],
    )
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hopsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute a configured simulation")
    runp.add_argument("config", help="path to a key=value config file")
    runp.add_argument("--mode", choices=_MODES, default=None)
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.mode is not None:
            cfg = replace(cfg, mode=args.mode)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, output_dir=args.out)
        cfg = resolve_config(cfg)
    except (ParseError, ValidationError) as exc:
        print(f"hopsim: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"hopsim: {exc}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except HopsimError as exc:
        print(f"hopsim: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
