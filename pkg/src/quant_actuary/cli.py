"""``quant-actuary <experiment> --config <path> --out <dir> [--seed N]``.

Writes plot-ready CSVs (one series per column) whose first line is a
``# config_sha256=...`` comment.  Sweep points and restarts run in a thread
pool sized by ``QUANT_ACTUARY_THREADS``; each task gets its own derived seed
and rows are assembled in task order, so outputs do not depend on the pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import excess as ex
from . import leecarter as lc
from . import reinsurance as rq
from .config import ExperimentConfig, config_hash, load_config, parse_config
from .errors import (
    AllShotsExcluded,
    CalibrationError,
    CapacityError,
    IngestionError,
    NumericalError,
    UsageError,
    ValidationError,
)
from .noise import calibrate
from .sim import derive_seed

__all__ = ["main", "run_excess", "run_reinsurance", "run_leecarter", "thread_count"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
THREADS_ENV = "QUANT_ACTUARY_THREADS"

EXCESS_COLUMNS = ["n", "R_theory", "R_truncate", "R_discrete_exact", "R_estimate", "bias_bound", "c_step", "P0", "std_error", "shots", "seed"]
REINSURANCE_COLUMNS = ["restart", "iteration", "quantum_quantum", "quantum_classical", "target", "retained_fraction"]
LEECARTER_COLUMNS = ["iteration", "loss", "frobenius", "kl_beta", "kl_kappa"]


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _pool_map(fn, items, workers: int) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _seed_text(seed) -> str:
    return "-".join(str(s) for s in seed) if isinstance(seed, list) else str(seed)


def write_csv(path: Path, columns, rows, digest: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_sha256={digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_json(path: Path, payload: dict, digest: str) -> None:
    payload = {"config_sha256": digest, **payload}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _noise(cfg: ExperimentConfig):
    return cfg.noise.model() if cfg.noise is not None else None


def run_excess(cfg: ExperimentConfig, workers: int = 1):
    """Rows of the payment sweep over ``n`` plus a summary mapping."""
    b = cfg.excess
    spec = ex.LognormalSpec(b.mu, b.sigma, b.x_max)
    contract = ex.ExcessContract(b.threshold, b.slope)
    r_theory = ex.payment_theory(spec, contract)
    r_trunc = ex.payment_truncated(spec, contract)

    def point(n):
        dist = ex.discretize(spec, contract, n)
        c_step = b.c * dist.unit if b.c_scaling == "per_value_unit" else b.c
        if cfg.mode == "exact":
            mode = "exact"
        else:
            mode = ex.ShotMode(cfg.shots, derive_seed(cfg.seed, n), _noise(cfg), cfg.mitigation, b.calibration_shots)
        res = ex.estimate_payment(dist, contract, c_step, mode)
        shots = cfg.shots if cfg.mode == "shots" else None
        seed = _seed_text(res.seed) if res.seed is not None else None
        return [
            n, r_theory, r_trunc, dist.exact_payment(contract.payment_factor), res.R_estimate,
            ex.bias_bound(dist, c_step, contract.payment_factor), c_step, res.P0, res.std_error, shots, seed,
        ]

    rows = _pool_map(point, sorted(b.n_values), workers)
    summary = {
        "R_theory": r_theory,
        "R_truncate": r_trunc,
        "within_bias_bound": [abs(r[4] - r[3]) <= r[5] for r in rows] if cfg.mode == "exact" else None,
    }
    return rows, summary


def _instance(cfg: ExperimentConfig) -> rq.CovarianceInstance:
    b = cfg.reinsurance
    return rq.CovarianceInstance(rq.generate_covariance(b.n, cfg.seed), b.target_weight, cfg.seed)


def run_reinsurance(cfg: ExperimentConfig, workers: int = 1):
    b = cfg.reinsurance
    inst = _instance(cfg)
    spec = rq.AnsatzSpec(inst.n, inst.k, b.layers)
    noise = _noise(cfg)
    target, argmins = rq.brute_force_allocation(inst)
    cal = None
    if cfg.mode == "shots" and noise is not None and b.compare_mitigation:
        cal = calibrate(noise, inst.n, b.calibration_shots, derive_seed(cfg.seed, 5))

    def restart(r):
        if cfg.mode == "exact":
            mode = "exact"
        else:
            mode = rq.ShotMode(cfg.shots, derive_seed(cfg.seed, 2, r), noise, cfg.mitigation, cfg.postselect, b.calibration_shots)
        if b.optimizer is None:
            opt = rq.EXACT_OPTIMIZER if cfg.mode == "exact" else rq.SHOT_OPTIMIZER
            if cfg.mode == "shots":
                opt = rq.SPSAConfig(**{**opt.__dict__, "seed": derive_seed(cfg.seed, 3, r)})
        elif b.optimizer.name == "spsa":
            opt = b.optimizer.build(derive_seed(cfg.seed, 3, r))
        else:
            opt = b.optimizer.build()
        res = rq.optimize_allocation(inst, spec, opt, mode, init_seed=derive_seed(cfg.seed, 1, r))
        info = {
            "restart": r,
            "best_bitstring": res.best_bitstring,
            "final_quantum_quantum": res.quantum_quantum[-1],
            "final_quantum_classical": res.quantum_classical[-1],
            "gap": res.gap,
            "within_2pct": bool(res.gap <= 0.02),
            "mitigation_closer": None,
        }
        if cal is not None:
            qc = res.quantum_classical[-1]
            probe = derive_seed(cfg.seed, 4, r)
            raw = rq.ShotMode(cfg.shots, probe, noise, mitigation=False, postselect=False)
            fixed = rq.ShotMode(cfg.shots, probe, noise, mitigation=True, postselect=True)
            v_raw = rq.evaluate_variance(res.final_params, inst, spec, raw)
            v_fix = rq.evaluate_variance(res.final_params, inst, spec, fixed, cal)
            info.update(raw_quantum_quantum=v_raw, mitigated_quantum_quantum=v_fix, mitigation_closer=bool(abs(v_fix - qc) < abs(v_raw - qc)))
        return [(r, *row) for row in res.rows()], info

    results = _pool_map(restart, range(b.restarts), workers)
    rows = [row for rs, _ in results for row in rs]
    infos = [info for _, info in results]
    summary = {
        "n": inst.n,
        "k": inst.k,
        "brute_force_optimum": target,
        "brute_force_argmin": argmins,
        "restarts": infos,
        "restarts_within_2pct": sum(i["within_2pct"] for i in infos),
    }
    return rows, summary


def run_leecarter(cfg: ExperimentConfig, workers: int = 1):
    b = cfg.leecarter
    path = Path(b.data) if b.data else lc.sample_data_path()
    dec = lc.build_log_matrix(lc.load_mortality(path))
    opt = b.optimizer.build(derive_seed(cfg.seed, 3)) if b.optimizer.name == "spsa" else b.optimizer.build()
    tr = lc.train_qsvd(dec.D, opt, cfg.mode, b.layers, init_seed=cfg.seed, shots=cfg.shots, seed=cfg.seed)
    dec.beta, dec.kappa, dec.sigma1 = tr.estimate.u, tr.estimate.v, tr.estimate.sigma1
    rows = [list(r) for r in tr.rows()]
    summary = {
        "data": str(path),
        "iterations": len(tr.trace),
        "status": tr.trace.status,
        "final_loss": tr.trace.final.value,
        "sigma1": tr.estimate.sigma1,
        "lambdas": [float(x) for x in tr.estimate.lambdas],
    }
    return rows, summary, dec


def _print_summary(experiment: str, summary: dict) -> None:
    if experiment == "excess":
        print(f"R_theory={summary['R_theory']!r} R_truncate={summary['R_truncate']!r}")
    elif experiment == "reinsurance":
        print(f"brute-force optimum {summary['brute_force_optimum']!r} at {', '.join(summary['brute_force_argmin'])}")
        for info in summary["restarts"]:
            line = f"restart {info['restart']}: best bitstring {info['best_bitstring']} gap {info['gap']:.4%}"
            if info["mitigation_closer"] is not None:
                line += f" mitigation_closer={info['mitigation_closer']}"
            print(line)
        print(f"{summary['restarts_within_2pct']}/{len(summary['restarts'])} restarts within 2%")
    else:
        print(f"final loss {summary['final_loss']!r} after {summary['iterations']} iterations, sigma1 {summary['sigma1']!r}")


def run(cfg: ExperimentConfig, out: Path, workers: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    name = cfg.experiment
    if name == "excess":
        rows, summary = run_excess(cfg, workers)
        write_csv(out / "excess.csv", EXCESS_COLUMNS, rows, digest)
    elif name == "reinsurance":
        rows, summary = run_reinsurance(cfg, workers)
        write_csv(out / "reinsurance.csv", REINSURANCE_COLUMNS, rows, digest)
    else:
        rows, summary, dec = run_leecarter(cfg, workers)
        write_csv(out / "leecarter.csv", LEECARTER_COLUMNS, rows, digest)
        dec.to_tsv(out / "leecarter_decomposition.tsv", f"config_sha256={digest}")
    write_json(out / f"{name}_summary.json", summary, digest)
    _print_summary(name, summary)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quant-actuary", description="Run an actuarial quantum-circuit experiment.")
    p.add_argument("experiment", choices=["excess", "reinsurance", "leecarter"])
    p.add_argument("--config", type=Path, help="JSON config; defaults apply when omitted")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = load_config(args.config, args.seed)
        else:
            cfg = parse_config({"experiment": args.experiment}, args.seed)
        if cfg.experiment != args.experiment:
            raise UsageError(f"config is for {cfg.experiment!r}, not {args.experiment!r}")
        workers = thread_count()
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run(cfg, args.out, workers)
    except (IngestionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ValidationError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, CalibrationError, AllShotsExcluded, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
