"""Command-line entry point: scenario runs, config validation, check suites.

Exit codes: 0 ok, 1 validation-suite failure, 2 config error, 3 runtime abort
(trace collapse, Picard non-convergence), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .ensemble import decompose_state, run_ensemble
from .errors import TrajectoryAbort
from .master import SMEParams, run_linear_sme, run_nonlinear_sme
from .meanfield import MeanFieldConfig, mckean_vlasov_solve
from .noise import sample_wiener_batch
from .pure import run_linear, run_nonlinear
from .scenario import Scenario, ScenarioError, apply_overrides, load_scenario, validate_scenario
from . import suites


@dataclass
class RunArtifacts:
    csv_path: str | None
    json_path: str
    config_hash: str
    seed: int
    digest: str  # sha256 of the deterministic CSV body (or of the summary JSON)


def _config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()[:16]


def _params(sc: Scenario) -> SMEParams:
    return SMEParams(sc.h, sc.ls, sc.dt, sc.picture)


def _grid_stride(sc: Scenario) -> int:
    strides = [stride for _, _, stride in sc.outputs]
    if not strides:
        return sc.steps
    return math.gcd(*strides) if len(strides) > 1 else strides[0]


def _run_block(sc: Scenario, params: SMEParams, stride: int, offset: int, count: int) -> np.ndarray:
    """States of trajectories [offset, offset+count) on the common checkpoint grid."""
    incr = sample_wiener_batch(params.n_channels, sc.steps, sc.dt, sc.seed, count, offset=offset)
    if sc.engine == "pure_linear":
        return run_linear(sc.chi0, params, incr, checkpoint_stride=stride)
    if sc.engine == "pure_nonlinear":
        return run_nonlinear(sc.chi0, params, incr, checkpoint_stride=stride)
    if sc.engine == "sme_linear":
        return run_linear_sme(sc.rho0, params, incr, checkpoint_stride=stride)
    if sc.engine == "sme_nonlinear":
        return run_nonlinear_sme(sc.rho0, params, incr, checkpoint_stride=stride)
    if sc.engine == "ensemble":
        return run_ensemble(decompose_state(sc.rho0), params, incr, checkpoint_stride=stride)
    raise ValueError(f"engine {sc.engine} has no trajectory runner")


def _observable_values(sc: Scenario, states: np.ndarray, op: np.ndarray) -> np.ndarray:
    """Normalized expectation of one observable per checkpoint/trajectory, shape (K+1, M)."""
    if sc.engine in ("pure_linear", "pure_nonlinear"):
        num = np.einsum("kmi,ij,kmj->km", np.conj(states), op, states).real
        den = np.sum(np.abs(states) ** 2, axis=-1)
        return num / den
    vals = np.einsum("ij,kmji->km", op, states).real
    if sc.engine == "sme_linear":
        vals = vals / np.einsum("kmii->km", states).real
    return vals


def run_scenario(sc: Scenario, out_dir: str, fmt: str = "both", threads: int = 1) -> RunArtifacts:
    """Execute a validated scenario and write CSV/JSON artifacts."""
    os.makedirs(out_dir, exist_ok=True)
    cfg_hash = _config_hash(sc.raw)
    stride = _grid_stride(sc)
    grid_times = sc.dt * stride * np.arange(sc.steps // stride + 1)

    engine_details: dict = {}
    per_traj: dict[str, np.ndarray] = {}
    means: dict[str, np.ndarray] = {}
    stderrs: dict[str, np.ndarray] = {}
    out_times: dict[str, np.ndarray] = {}

    if sc.engine == "meanfield":
        cfg = MeanFieldConfig(
            params=_params(sc),
            interaction=sc.interaction,
            rho0=sc.rho0,
            trajectories=sc.trajectories,
            horizon=sc.horizon,
            picard_max_iter=sc.picard_max_iter,
            picard_tol=sc.picard_tol,
            mode=sc.meanfield_mode,
            seed=sc.seed,
        )
        report = mckean_vlasov_solve(cfg)
        if not report.converged:
            raise TrajectoryAbort(
                "Picard iteration did not converge: distances "
                + ", ".join(f"{d:.3e}" for d in report.iteration_distances)
            )
        engine_details["picard"] = report.to_json()
        mean_final = report.mean_field_path[-1]
        for label, op, ostride in sc.outputs:
            sel = report.mean_field_path[:: ostride]
            vals = np.einsum("ij,kji->k", op, sel).real
            means[label] = vals
            stderrs[label] = np.zeros_like(vals)
            out_times[label] = sc.dt * ostride * np.arange(vals.size)
    else:
        params = _params(sc)
        blocks = max(1, min(threads, sc.trajectories))
        bounds = np.linspace(0, sc.trajectories, blocks + 1).astype(int)
        if blocks == 1:
            states = _run_block(sc, params, stride, 0, sc.trajectories)
        else:
            with ThreadPoolExecutor(max_workers=blocks) as pool:
                futures = [
                    pool.submit(_run_block, sc, params, stride, int(a), int(b - a))
                    for a, b in zip(bounds[:-1], bounds[1:])
                    if b > a
                ]
                states = np.concatenate([f.result() for f in futures], axis=1)
        for label, op, ostride in sc.outputs:
            sel = states[:: ostride // stride]
            vals = _observable_values(sc, sel, op)  # (K+1, M)
            per_traj[label] = vals
            means[label] = vals.mean(axis=1)
            stderrs[label] = (
                vals.std(axis=1, ddof=1) / np.sqrt(vals.shape[1]) if vals.shape[1] > 1 else np.zeros(vals.shape[0])
            )
            out_times[label] = sc.dt * ostride * np.arange(vals.shape[0])
        if sc.engine in ("pure_linear", "pure_nonlinear"):
            nrm = np.sum(np.abs(states[-1]) ** 2, axis=-1)
            rho_fin = np.einsum("mi,mj->mij", states[-1], np.conj(states[-1])) / nrm[:, None, None]
            mean_final = rho_fin.mean(axis=0)
        elif sc.engine == "sme_linear":
            traces = np.einsum("mii->m", states[-1]).real
            mean_final = (states[-1] / traces[:, None, None]).mean(axis=0)
        else:
            mean_final = states[-1].mean(axis=0)

    safe_name = "".join(c if c.isalnum() or c in "-_." else "_" for c in sc.name)
    csv_path = None
    body_lines: list[str] = []
    if sc.outputs:
        body_lines.append("t,traj_id,observable,value")
        for label, _, _ in sc.outputs:
            times = out_times[label]
            traj_vals = per_traj.get(label)
            for k, t in enumerate(times):
                if traj_vals is not None:
                    for m in range(traj_vals.shape[1]):
                        body_lines.append(f"{t:.17g},{m},{label},{traj_vals[k, m]:.17g}")
                body_lines.append(f"{t:.17g},mean,{label},{means[label][k]:.17g}")
    body = "\n".join(body_lines) + ("\n" if body_lines else "")

    summary = {
        "name": sc.name,
        "engine": sc.engine,
        "picture": sc.picture,
        "seed": sc.seed,
        "config_hash": cfg_hash,
        "trajectories": sc.trajectories,
        "dt": sc.dt,
        "horizon": sc.horizon,
        "grid_times": grid_times.tolist(),
        "observables": {
            label: {
                "times": out_times[label].tolist(),
                "mean": means[label].tolist(),
                "stderr": stderrs[label].tolist(),
            }
            for label, _, _ in sc.outputs
        },
        "final_state_mean": [[[z.real, z.imag] for z in row] for row in np.asarray(mean_final)],
        "engine_details": engine_details,
    }
    summary_blob = json.dumps(summary, indent=2, sort_keys=True)
    digest = hashlib.sha256((body or summary_blob).encode()).hexdigest()

    if sc.outputs and fmt in ("csv", "both"):
        csv_path = os.path.join(out_dir, f"{safe_name}.csv")
        stamp = datetime.now(timezone.utc).isoformat()
        with open(csv_path, "w") as f:
            f.write(f"# generated={stamp} scenario={safe_name} seed={sc.seed} config={cfg_hash}\n")
            f.write(body)
    json_path = os.path.join(out_dir, f"{safe_name}.summary.json")
    if fmt in ("json", "both") or not sc.outputs:
        with open(json_path, "w") as f:
            f.write(summary_blob + "\n")
    return RunArtifacts(csv_path, json_path, cfg_hash, sc.seed, digest)


def _cmd_simulate(args) -> int:
    data = json.load(open(args.scenario))
    if args.set:
        data = apply_overrides(data, args.set)
    if args.seed is not None:
        data["seed"] = args.seed
    sc = validate_scenario(data)
    artifacts = run_scenario(sc, args.out, fmt=args.format, threads=args.threads)
    print(
        json.dumps(
            {
                "csv": artifacts.csv_path,
                "summary": artifacts.json_path,
                "config_hash": artifacts.config_hash,
                "seed": artifacts.seed,
                "digest": artifacts.digest,
            },
            indent=2,
        )
    )
    return 0


def _cmd_validate_config(args) -> int:
    sc = load_scenario(args.scenario)
    print(
        json.dumps(
            {
                "valid": True,
                "name": sc.name,
                "dim": sc.dim,
                "engine": sc.engine,
                "picture": sc.picture,
                "channels": int(sc.ls.shape[0]),
                "steps": sc.steps,
                "config_hash": _config_hash(sc.raw),
            },
            indent=2,
        )
    )
    return 0


def _cmd_check(args) -> int:
    results, passed = suites.run_suite(args.suite, fast=args.fast, sabotage=args.sabotage)
    report = {
        "suite": args.suite,
        "pass": passed,
        "checks": [r.to_json() for r in results],
    }
    blob = json.dumps(report, indent=2)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"check_{args.suite}.json")
        with open(path, "w") as f:
            f.write(blob + "\n")
    print(blob)
    if not passed:
        failing = [r.name for r in results if not r.passed]
        print("FAILING: " + ", ".join(failing), file=sys.stderr)
    return 0 if passed else 1


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qsme",
        description="Simulate and validate diffusive quantum stochastic master equations.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario file and emit CSV/JSON artifacts")
    sim.add_argument("scenario", help="path to a scenario JSON file")
    sim.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a scenario field (dotted path, JSON value)")
    sim.add_argument("--out", default="out", help="output directory (default: out)")
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument("--threads", type=int, default=1,
                     help="trajectory worker threads (results are identical for any value)")
    sim.add_argument("--format", choices=("csv", "json", "both"), default="both",
                     help="artifact formats to write (default: both)")
    sim.set_defaults(func=_cmd_simulate)

    val = sub.add_parser("validate-config", help="validate a scenario file without running it")
    val.add_argument("scenario")
    val.set_defaults(func=_cmd_validate_config)

    chk = sub.add_parser("check", help="run a pinned-seed validation suite")
    chk.add_argument("suite", choices=("all",) + suites.SUITE_NAMES)
    chk.add_argument("--out", default=None, help="also write the JSON report to this directory")
    chk.add_argument("--fast", action="store_true",
                     help="reduced Monte Carlo budgets (smoke testing, not the acceptance gate)")
    chk.add_argument("--sabotage", action="store_true",
                     help="(testing) bias the martingale samples to verify failure detection")
    chk.set_defaults(func=_cmd_check)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as e:
        for path, msg in e.errors:
            print(f"config error at {path}: {msg}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"cannot read {e.filename}: {e.strerror}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"config error: not valid JSON ({e})", file=sys.stderr)
        return 2
    except TrajectoryAbort as e:
        print(json.dumps({"abort": True, "reason": e.reason, "step": e.step}), file=sys.stderr)
        return 3
    except OSError as e:
        print(f"I/O failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
