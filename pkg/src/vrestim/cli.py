"""Experiment runner: config parsing, seeded execution, report persistence.

Subcommands ``run`` and ``validate`` work on a YAML config validated
against the shipped JSON schema (strict, unknown keys rejected; the only
silent default is seed = 0).  ``run`` writes report.json, trajectories.csv
and optional SVG plots into the output directory; identical config + seed
produces identical artifacts (modulo the timestamp field) at any worker
count, because all randomness is addressed by (trial, step) counters and
trial chunks carry their global offsets.

Exit codes: 1 schema error, 2 inadmissible parameters (the violated side
condition is named), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from importlib import resources

import numpy as np
import yaml

from . import bounds as bnd
from . import concentration as conc
from . import constrained as cst
from . import geometry as geo
from . import oracles, rng
from .estimator import EstimatorConfig, Schedule, estimator_init, estimator_step
from .optimizer import (
    FAMILY_BY_INDEX,
    configure_from_table,
    fit_loglog_slope,
    mirror_descent_run,
    normalized_update,
    sweep_start,
)

EXIT_SCHEMA = 1
EXIT_INADMISSIBLE = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    pass


class InadmissibleError(Exception):
    pass


def load_schema() -> dict:
    text = resources.files("vrestim").joinpath(
        "schemas/experiment_config.schema.json").read_text()
    return json.loads(text)


def load_config(path: str) -> dict:
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def validate_config(cfg: dict) -> list[str]:
    """Schema plus cross-field checks; returns a list of problems (empty = ok)."""
    import jsonschema

    schema = load_schema()
    validator = jsonschema.Draft202012Validator(schema)
    problems = [
        f"{'/'.join(str(p) for p in err.absolute_path) or '<root>'}: {err.message}"
        for err in validator.iter_errors(cfg)
    ]
    if problems:
        return problems
    kind = cfg["experiment"]
    if kind in ("estimate", "mirror-descent"):
        for key in ("problem", "estimator", "horizon", "trials"):
            if key not in cfg:
                problems.append(f"<root>: experiment {kind!r} requires {key!r}")
    elif kind == "sgm":
        for key in ("problem", "sgm", "horizon", "trials"):
            if key not in cfg:
                problems.append(f"<root>: experiment 'sgm' requires {key!r}")
        if "problem" in cfg and cfg["problem"]["kind"] != "constrained-linear":
            problems.append("problem/kind: the sgm experiment needs constrained-linear")
    elif kind == "freedman":
        for key in ("freedman", "trials"):
            if key not in cfg:
                problems.append(f"<root>: experiment 'freedman' requires {key!r}")
    elif kind == "sweep":
        for key in ("problem", "sweep", "trials"):
            if key not in cfg:
                problems.append(f"<root>: experiment 'sweep' requires {key!r}")
    if "estimator" in cfg and not cfg["estimator"].get("from_table", False):
        est = cfg["estimator"]
        case = est["case"]
        if "step_size" not in est:
            problems.append("estimator: explicit configuration requires step_size")
        if case == 1 and "beta" not in est:
            problems.append("estimator: case 1 requires beta")
        if case == 2 and "p" not in est:
            problems.append("estimator: case 2 requires p")
        if case == 3 and "period" not in est:
            problems.append("estimator: case 3 requires period")
    return problems


def build_geometry(spec: dict) -> geo.GeometrySpec:
    kind = spec.get("geometry", "euclidean-box")
    d = spec["dimension"]
    if kind == "euclidean-box":
        h = spec.get("box_half_width", 1.0)
        return geo.box(np.full(d, -h), np.full(d, h))
    if kind == "simplex":
        return geo.simplex(d)
    return geo.euclidean(d)


def _rotation(d: int, seed: int) -> np.ndarray:
    raw = rng.normals(seed, 0, rng.STREAM_MISC, np.arange(d), 0, d)
    q, r = np.linalg.qr(raw)
    return q * np.sign(np.diag(r))


def build_problem(spec: dict):
    kind = spec["kind"]
    d = spec["dimension"]
    geom = build_geometry(spec)
    if kind == "noisy-quadratic":
        lo, hi = spec.get("spectrum", [0.25, 1.0])
        q = _rotation(d, spec.get("matrix_seed", 0))
        matrix = q @ np.diag(np.linspace(lo, hi, d)) @ q.T
        matrix = 0.5 * (matrix + matrix.T)
        return oracles.NoisyQuadratic(geom, matrix, spec.get("noise_std", 1.0))
    if kind == "linear-gaussian":
        s = spec.get("noise_std", 1.0)
        return oracles.LinearGaussian(geom, s ** 2 * np.eye(d))
    if kind == "finite-sum":
        m = spec.get("components", 4)
        base = _rotation(d, spec.get("matrix_seed", 0))
        mats, offs = [], []
        for i in range(m):
            scale = 0.5 + 0.5 * (i + 1) / m
            mats.append(scale * (base @ base.T + np.eye(d)))
            offs.append(((-1.0) ** i) * spec.get("noise_std", 1.0)
                        * np.linspace(0.1, 1.0, d))
        return oracles.FiniteSum(geom, np.stack(mats), np.stack(offs))
    if kind == "constrained-linear":
        cost = np.asarray(spec.get("cost", np.linspace(1.0, 2.0, d)), dtype=float)
        normal = np.asarray(spec.get("normal", -np.ones(d)), dtype=float)
        return oracles.ConstrainedLinear(
            geom, cost, normal, spec.get("offset", 0.0),
            spec.get("noise_std", 1.0), spec.get("subgrad_noise", 0.0),
        )
    raise ConfigError(f"unknown problem kind {kind!r}")


def start_point(problem, spec: dict) -> np.ndarray:
    if spec.get("start", "center") == "corner":
        return sweep_start(problem)
    return geo.center_point(problem.geometry)


def resolve_estimator(cfg: dict, problem, start):
    """Estimator config + envelope from the estimator block."""
    est = cfg["estimator"]
    family, case = est["family"], est["case"]
    horizon = cfg["horizon"]
    delta = cfg["delta"]
    kappa = 1.0 if problem.scalar_valued else problem.geometry.kappa
    if est.get("from_table", False):
        constants = problem.constants_for_start(start)
        table = configure_from_table(family, case, constants, horizon, delta, kappa)
        if not table.admissible:
            raise InadmissibleError(
                f"horizon {horizon} is below the rate-selection threshold "
                f"{table.selection.horizon_threshold:.6g} for family {family} case {case}"
            )
        config = table.config
    else:
        schedule = {1: Schedule.never(),
                    2: Schedule.probabilistic(est.get("p", 0.1)),
                    3: Schedule.periodic(est.get("period", 16))}[case]
        config = EstimatorConfig(
            family=FAMILY_BY_INDEX[family],
            beta=est.get("beta", 1.0 if case != 1 else 0.9),
            schedule=schedule,
            batch_size=est.get("batch_size", 1),
            step_size=est["step_size"],
            horizon=horizon,
        )
    env = bnd.envelope(
        config.family, case,
        eta=config.step_size, batch=config.batch_size, horizon=horizon,
        G=1.0, constants=problem.constants, delta=delta, kappa=kappa,
        beta=config.beta if case == 1 else None,
        p=config.schedule.p if case == 2 else None,
        period=config.schedule.period if case == 3 else None,
    )
    return config, env


def _chunks(total: int, workers: int):
    size = -(-total // workers)
    offset = 0
    while offset < total:
        yield offset, min(size, total - offset)
        offset += size


def _estimate_chunk(cfg: dict, offset: int, count: int):
    problem = build_problem(cfg["problem"])
    start = start_point(problem, cfg["problem"])
    config, env = resolve_estimator(cfg, problem, start)
    master = cfg.get("seed", 0)
    geom = problem.geometry
    w = np.broadcast_to(start, (count, geom.dimension)).copy()
    state, _ = estimator_init(config, problem, w, master, trials=count,
                              trial_offset=offset, keep_vectors=False)
    rows = []
    for t in range(1, config.horizon + 1):
        rec = estimator_step(state, w, config, problem, master, keep_vectors=True)
        u = normalized_update(rec.value, geom)
        w = geo.prox_step(w, u, config.step_size, geom)
        rows.append((rec.reset, rec.error_norm, rec.bias_bound, rec.var_proxy, rec.epoch))
    return rows, state.calls


def run_estimate(cfg: dict, workers: int):
    problem = build_problem(cfg["problem"])
    start = start_point(problem, cfg["problem"])
    config, env = resolve_estimator(cfg, problem, start)
    trials = cfg["trials"]
    parts = _parallel(cfg, _estimate_chunk, trials, workers)
    horizon = config.horizon
    per_step = []
    for t in range(horizon):
        merged = tuple(np.concatenate([part[0][t][k] for part in parts])
                       for k in range(5))
        per_step.append(merged)
    calls = np.concatenate([part[1] for part in parts])
    env_values = None if isinstance(env, bnd.NoEnvelope) \
        else np.array([float(env(t)) for t in range(1, horizon + 1)])
    rows = []
    violations = 0
    for t in range(1, horizon + 1):
        reset, err, bias, proxy, epoch = per_step[t - 1]
        env_t = None if env_values is None else env_values[t - 1]
        if env_t is not None:
            violations += int((err > env_t).sum())
        for i in range(trials):
            rows.append([
                i, t, int(reset[i]), repr(float(err[i])),
                "" if env_t is None else repr(env_t),
                "" if np.isnan(bias[i]) else repr(float(bias[i])),
                "" if np.isnan(proxy[i]) else repr(float(proxy[i])),
                int(epoch[i]),
            ])
    checked = trials * horizon
    aggregates = {
        "mean_error": float(np.mean([s[1].mean() for s in per_step])),
        "final_mean_error": float(per_step[-1][1].mean()),
        "total_calls": int(calls.sum()),
        "envelope_available": env_values is not None,
    }
    if env_values is not None:
        lo, hi = conc.wilson_interval(violations, checked)
        aggregates.update(
            violation_rate=violations / checked, violations=violations,
            checked=checked, wilson_low=lo, wilson_high=hi,
        )
    plots = []
    if env_values is not None:
        err_mean = np.array([s[1].mean() for s in per_step])
        err_max = np.array([s[1].max() for s in per_step])
        plots.append(("error_vs_envelope.svg", _plot_envelope,
                      (np.arange(1, horizon + 1), err_mean, err_max, env_values)))
    header = ["trial", "t", "reset", "error_norm", "envelope",
              "bias_bound", "var_proxy", "epoch"]
    return header, rows, aggregates, plots


def _mirror_chunk(cfg: dict, offset: int, count: int):
    problem = build_problem(cfg["problem"])
    start = start_point(problem, cfg["problem"])
    config, _ = resolve_estimator(cfg, problem, start)
    run = mirror_descent_run(problem, config, cfg.get("seed", 0), trials=count,
                             trial_offset=offset, start=start)
    return (run.witness, run.grad_norm, run.estimate_norm, run.error_norm,
            run.step_norm, run.reset, run.calls)


def run_mirror_descent(cfg: dict, workers: int):
    trials = cfg["trials"]
    parts = _parallel(cfg, _mirror_chunk, trials, workers)
    witness, grad, est, err, step, reset = (
        np.concatenate([p[k] for p in parts], axis=1) for k in range(6))
    calls = np.concatenate([p[6] for p in parts])
    horizon = witness.shape[0]
    rows = []
    for t in range(1, horizon + 1):
        for i in range(trials):
            rows.append([
                i, t, repr(float(witness[t - 1, i])), repr(float(grad[t - 1, i])),
                repr(float(est[t - 1, i])), repr(float(err[t - 1, i])),
                repr(float(step[t - 1, i])), int(reset[t - 1, i]),
            ])
    aggregates = {
        "avg_witness": float(witness.mean()),
        "avg_witness_per_trial_std": float(witness.mean(axis=0).std()),
        "avg_error": float(err.mean()),
        "max_step_norm": float(step.max()),
        "total_calls": int(calls.sum()),
    }
    header = ["trial", "t", "witness", "grad_norm", "estimate_norm",
              "error_norm", "step_norm", "reset"]
    return header, rows, aggregates, []


def _sgm_chunk(cfg: dict, offset: int, count: int):
    problem = build_problem(cfg["problem"])
    setup = cst.setup_from_problem(problem)
    plan = cst.sgm_configure(cfg["sgm"]["case"], cfg["sgm"]["family"], setup,
                             cfg["horizon"], cfg["delta"])
    res = cst.sgm_run(setup, plan, cfg.get("seed", 0), trials=count,
                      trial_offset=offset)
    return res


def run_sgm(cfg: dict, workers: int):
    problem = build_problem(cfg["problem"])
    setup = cst.setup_from_problem(problem)
    plan = cst.sgm_configure(cfg["sgm"]["case"], cfg["sgm"]["family"], setup,
                             cfg["horizon"], cfg["delta"])
    if not plan.admissible:
        raise InadmissibleError(plan.side_condition)
    trials = cfg["trials"]
    parts = _parallel(cfg, _sgm_chunk, trials, workers)
    f_gap = np.concatenate([p.f_gap for p in parts])
    h_val = np.concatenate([p.h_value for p in parts])
    selected = np.concatenate([p.selected_count for p in parts])
    calls = np.concatenate([p.calls for p in parts])
    success = np.concatenate([p.success for p in parts])
    rows = [
        [i, plan.case, plan.family, plan.horizon, repr(plan.epsilon),
         repr(plan.envelope_bound), repr(float(f_gap[i])), repr(float(h_val[i])),
         int(selected[i]), int(calls[i]), int(success[i])]
        for i in range(trials)
    ]
    aggregates = {
        "epsilon": plan.epsilon,
        "envelope": plan.envelope_bound,
        "eta": plan.eta,
        "batch": plan.batch,
        "success_rate": float(success.mean()),
        "nonempty_rate": float((selected > 0).mean()),
        "mean_calls": float(calls.mean()),
        "expected_calls": plan.expected_calls,
        "predicted_gap": plan.predicted_gap,
        "mean_f_gap": float(f_gap[np.isfinite(f_gap)].mean()),
        "mean_h_value": float(h_val[np.isfinite(h_val)].mean()),
    }
    header = ["trial", "case", "family", "horizon", "epsilon", "envelope",
              "f_gap", "h_value", "selected", "calls", "success"]
    return header, rows, aggregates, []


def _freedman_chunk(cfg: dict, offset: int, count: int):
    fr = cfg["freedman"]
    spec = conc.MartingaleSpec(
        dimension=fr["dimension"], horizon=fr["horizon"],
        schedule=fr.get("schedule", "constant"), scale=fr["scale"],
    )
    final_norm, realized = conc.simulate(spec, count, cfg.get("seed", 0),
                                         trial_offset=offset)
    return final_norm, realized


def run_freedman(cfg: dict, workers: int):
    fr = cfg["freedman"]
    trials = cfg["trials"]
    spec = conc.MartingaleSpec(
        dimension=fr["dimension"], horizon=fr["horizon"],
        schedule=fr.get("schedule", "constant"), scale=fr["scale"],
    )
    budget = conc.deterministic_budget(spec)
    parts = _parallel(cfg, _freedman_chunk, trials, workers)
    final_norm = np.concatenate([p[0] for p in parts])
    realized = np.concatenate([p[1] for p in parts])
    rows, reports = [], []
    for delta in fr["deltas"]:
        gamma = conc.gamma_for_delta(delta)
        radius = (math.sqrt(spec.kappa) + gamma) * math.sqrt(budget)
        violations = int(((final_norm >= radius) & (realized <= budget)).sum())
        lo, hi = conc.wilson_interval(violations, trials)
        report = {"delta": delta, "gamma": gamma,
                  "bound": math.exp(-gamma ** 2 / 3.0),
                  "rate": violations / trials, "ci_low": lo, "ci_high": hi,
                  "trials": trials, "violations": violations, "mode": "certified"}
        reports.append(report)
        rows.append([repr(delta), repr(gamma), repr(report["bound"]),
                     repr(report["rate"]), repr(lo), repr(hi), trials,
                     violations, "certified"])
    if fr.get("power_check", False):
        power_spec = conc.MartingaleSpec(
            dimension=fr["dimension"], horizon=fr["horizon"],
            schedule=fr.get("schedule", "constant"), scale=fr["scale"],
            noise=conc.NOISE_MATCHED,
        )
        gamma = conc.gamma_for_delta(0.5)
        rep = conc.freedman_violation_rate(power_spec, budget, gamma, trials,
                                           cfg.get("seed", 0), tag=1)
        report = {"delta": 0.5, "gamma": rep.gamma, "bound": rep.bound,
                  "rate": rep.rate, "ci_low": rep.ci_low, "ci_high": rep.ci_high,
                  "trials": rep.trials, "violations": rep.violations,
                  "mode": "matched-power-probe"}
        reports.append(report)
        rows.append([repr(0.5), repr(rep.gamma), repr(rep.bound), repr(rep.rate),
                     repr(rep.ci_low), repr(rep.ci_high), rep.trials,
                     rep.violations, "matched-power-probe"])
    aggregates = {"budget": budget, "reports": reports}
    plots = [("violation_rates.svg", _plot_freedman, (reports,))]
    header = ["delta", "gamma", "bound", "rate", "ci_low", "ci_high",
              "trials", "violations", "mode"]
    return header, rows, aggregates, plots


def run_sweep(cfg: dict, workers: int):
    del workers  # horizons are sequential; trials are already vectorized
    problem = build_problem(cfg["problem"])
    trials = cfg["trials"]
    rows_out, slopes = [], {}
    for row_idx, (family, case) in enumerate(cfg["sweep"]["rows"]):
        per_row = []
        for k, horizon in enumerate(cfg["sweep"]["horizons"]):
            run_cfg = dict(cfg)
            run_cfg["horizon"] = int(horizon)
            run_cfg["estimator"] = {"family": family, "case": case,
                                    "from_table": True}
            start = start_point(problem, cfg["problem"])
            config, _ = resolve_estimator(run_cfg, problem, start)
            run = mirror_descent_run(
                problem, config, cfg.get("seed", 0),
                tag=(family * 10 + case) * 100 + k, trials=trials, start=start,
            )
            label = bnd.ROW_LABELS[(config.family, case)]
            per_row.append({
                "family": family, "case": case, "label": label,
                "horizon": int(horizon),
                "avg_witness": float(run.avg_witness.mean()),
                "avg_error": float(run.error_norm.mean()),
                "eta": config.step_size, "batch": config.batch_size,
            })
        slope = fit_loglog_slope([r["horizon"] for r in per_row],
                                 [r["avg_witness"] for r in per_row])
        slopes[f"family{family}_case{case}"] = slope
        rows_out.extend(per_row)
    rows = [[r["family"], r["case"], r["label"], r["horizon"],
             repr(r["avg_witness"]), repr(r["avg_error"]), repr(r["eta"]),
             r["batch"]] for r in rows_out]
    aggregates = {"slopes": slopes, "points": rows_out}
    plots = [("witness_vs_horizon.svg", _plot_sweep, (rows_out,))]
    header = ["family", "case", "label", "horizon", "avg_witness",
              "avg_error", "eta", "batch"]
    return header, rows, aggregates, plots


_CHUNK_RUNNERS = {}


def _parallel(cfg: dict, chunk_fn, trials: int, workers: int):
    jobs = list(_chunks(trials, max(1, workers)))
    if len(jobs) == 1 or workers <= 1:
        return [chunk_fn(cfg, off, cnt) for off, cnt in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(chunk_fn, cfg, off, cnt) for off, cnt in jobs]
        return [f.result() for f in futures]


def _plot_envelope(ax, steps, err_mean, err_max, env_values):
    ax.plot(steps, err_mean, label="mean ||e_t||")
    ax.plot(steps, err_max, label="max ||e_t||", alpha=0.6)
    ax.plot(steps, env_values, label="envelope", linestyle="--")
    ax.set_xlabel("t")
    ax.set_ylabel("estimation error")
    ax.set_yscale("log")
    ax.legend()


def _plot_freedman(ax, reports):
    xs = np.arange(len(reports))
    ax.bar(xs - 0.2, [r["rate"] for r in reports], width=0.4, label="empirical rate")
    ax.bar(xs + 0.2, [r["bound"] for r in reports], width=0.4, label="bound")
    ax.set_xticks(xs, [f"{r['mode']}\ndelta={r['delta']}" for r in reports], fontsize=7)
    ax.set_yscale("log")
    ax.legend()


def _plot_sweep(ax, points):
    by_row = {}
    for p in points:
        by_row.setdefault(p["label"], []).append(p)
    for label, pts in by_row.items():
        ax.plot([p["horizon"] for p in pts], [p["avg_witness"] for p in pts],
                marker="o", label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("T")
    ax.set_ylabel("average witness")
    ax.legend()


def _write_plots(outdir, plots):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for name, fn, args in plots:
        fig, ax = plt.subplots(figsize=(6, 4))
        fn(ax, *args)
        fig.tight_layout()
        fig.savefig(str(outdir / name))
        plt.close(fig)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    return value


def write_report(outdir, cfg: dict, aggregates: dict) -> dict:
    payload = {"config": _jsonable(cfg), "aggregates": _jsonable(aggregates)}
    canonical = json.dumps(payload, sort_keys=True).encode()
    payload["determinism_hash"] = hashlib.sha256(canonical).hexdigest()
    payload["generated_at"] = datetime.now(timezone.utc).isoformat()
    with open(outdir / "report.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return payload


_RUNNERS = {
    "estimate": run_estimate,
    "mirror-descent": run_mirror_descent,
    "sgm": run_sgm,
    "freedman": run_freedman,
    "sweep": run_sweep,
}


def run(cfg: dict, outdir, workers: int | None = None, plots: bool = True) -> dict:
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg.setdefault("seed", 0)
    n_workers = workers if workers is not None else cfg.get("workers", 1)
    header, rows, aggregates, plot_specs = _RUNNERS[cfg["experiment"]](cfg, n_workers)
    with open(outdir / "trajectories.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    if plots and cfg.get("plots", True) and plot_specs:
        _write_plots(outdir, plot_specs)
    return write_report(outdir, cfg, aggregates)


def resolved_echo(cfg: dict) -> dict:
    """Admissibility checks plus the resolved parameter echo (no execution)."""
    cfg = dict(cfg)
    cfg.setdefault("seed", 0)
    kind = cfg["experiment"]
    if kind in ("estimate", "mirror-descent"):
        problem = build_problem(cfg["problem"])
        start = start_point(problem, cfg["problem"])
        config, env = resolve_estimator(cfg, problem, start)
        echo = {
            "family": config.family, "beta": config.beta,
            "schedule": config.schedule.kind, "p": config.schedule.p,
            "period": config.schedule.period, "batch_size": config.batch_size,
            "step_size": config.step_size,
        }
        if not isinstance(env, bnd.NoEnvelope):
            echo["envelope_at_horizon"] = float(env(cfg["horizon"]))
        else:
            echo["envelope_at_horizon"] = None
            echo["envelope_unavailable"] = env.reason
        return echo
    if kind == "sgm":
        problem = build_problem(cfg["problem"])
        setup = cst.setup_from_problem(problem)
        plan = cst.sgm_configure(cfg["sgm"]["case"], cfg["sgm"]["family"], setup,
                                 cfg["horizon"], cfg["delta"])
        if not plan.admissible:
            raise InadmissibleError(plan.side_condition)
        return {
            "eta": plan.eta, "beta": plan.beta, "batch": plan.batch,
            "epsilon": plan.epsilon, "envelope": plan.envelope_bound,
            "predicted_gap": plan.predicted_gap,
            "expected_calls": plan.expected_calls,
        }
    if kind == "freedman":
        spec = conc.MartingaleSpec(
            dimension=cfg["freedman"]["dimension"], horizon=cfg["freedman"]["horizon"],
            schedule=cfg["freedman"].get("schedule", "constant"),
            scale=cfg["freedman"]["scale"],
        )
        return {"budget": conc.deterministic_budget(spec),
                "gammas": [conc.gamma_for_delta(d) for d in cfg["freedman"]["deltas"]]}
    if kind == "sweep":
        problem = build_problem(cfg["problem"])
        start = start_point(problem, cfg["problem"])
        constants = problem.constants_for_start(start)
        echo = {}
        for family, case in cfg["sweep"]["rows"]:
            for horizon in cfg["sweep"]["horizons"]:
                table = configure_from_table(family, case, constants, int(horizon),
                                             cfg["delta"],
                                             kappa=problem.geometry.kappa)
                if not table.admissible:
                    raise InadmissibleError(
                        f"horizon {horizon} is below the rate-selection threshold "
                        f"{table.selection.horizon_threshold:.6g} for family "
                        f"{family} case {case}"
                    )
                echo[f"family{family}_case{case}_T{horizon}"] = {
                    "eta": table.config.step_size, "batch": table.config.batch_size,
                }
        return echo
    return {}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vrestim",
                                     description="variance-reduced estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="out")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--no-plots", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (OSError, yaml.YAMLError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    problems = validate_config(cfg)
    if problems:
        for line in problems:
            print(f"schema error: {line}", file=sys.stderr)
        return EXIT_SCHEMA
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers

    try:
        echo = resolved_echo(cfg)
    except InadmissibleError as exc:
        print(f"inadmissible parameters: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except Exception as exc:  # config resolved but construction failed
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if args.command == "validate":
        print("ok")
        print(json.dumps(_jsonable(echo), sort_keys=True, indent=2))
        return 0

    try:
        payload = run(cfg, args.out, workers=args.workers,
                      plots=not args.no_plots)
    except InadmissibleError as exc:
        print(f"inadmissible parameters: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(_jsonable(payload.get("aggregates", {})), sort_keys=True)[:2000])
    return 0


if __name__ == "__main__":
    sys.exit(main())
