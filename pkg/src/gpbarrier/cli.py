"""Command-line pipeline: gen-data, fit-gp, bounds, prune, validate, run.

Every stage reads the artifacts of the previous one from the output
directory and writes its own, so a pipeline can be resumed at any stage.
Exit status is 0 on success, 2 when pruning is infeasible and 1 on errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import _accel
from .barrier import verify_certificate
from .config import ConfigError, RunConfig, default_start, load_config, substream_seed
from .gp import GPModel, KernelConfig
from .pruning import PermissibleStrategySet, synthesize_permissible_set
from .systems import generate_dataset, load_dataset, save_dataset
from .transitions import TransitionIntervalMatrix, build_matrix
from .validation import adversarial_contrast, monte_carlo, write_trajectories

log = logging.getLogger("gpbarrier")

STAGES = ("gen-data", "fit-gp", "bounds", "prune", "validate")
DATASET = "dataset.csv"
MODEL = "gp_model.json"
BOUNDS = "bounds.json"
CERTIFICATE = "certificate.json"
PERMISSIBLE = "permissible_set.json"
VALIDATION = "validation.json"
TRAJECTORIES = "trajectories.csv"
SUMMARY = "run_summary.txt"

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class MissingArtifact(FileNotFoundError):
    pass


def _need(out: Path, name: str, stage: str) -> Path:
    path = out / name
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path} (produced by the {stage} stage)")
    return path


def _write_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- stages --------------------------------------------------------------------

def stage_gen_data(cfg: RunConfig, out: Path) -> int:
    if cfg.dataset is not None:
        ds = load_dataset(cfg.dataset)
        log.info("loaded %d records from %s", len(ds), cfg.dataset)
    else:
        ds = generate_dataset(cfg.system, cfg.noise, cfg.sampling_region(), cfg.M, substream_seed(cfg.seed, "data"))
        log.info("generated %d records", len(ds))
    save_dataset(ds, out / DATASET)
    return EXIT_OK


def stage_fit_gp(cfg: RunConfig, out: Path) -> int:
    if cfg.known_system:
        _write_json(out / MODEL, {"known_system": True, "system": cfg.system.to_dict()})
        return EXIT_OK
    ds = load_dataset(_need(out, DATASET, "gen-data"))
    gp = GPModel.fit(ds, cfg.kernel)
    alpha = cfg.error.alpha(gp)
    _write_json(out / MODEL, {
        "known_system": False,
        "kernel": {"signal_variance": cfg.kernel.signal_variance, "lengthscales": list(cfg.kernel.lengthscales),
                   "noise_variance": cfg.kernel.noise_variance},
        "jitter": gp.jitter, "information_gain": gp.information_gain(),
        "posterior_mean_rkhs_norms": gp.rkhs_norms().tolist(), "alpha": alpha.tolist(),
        "Z": gp.Z.tolist(), "Y": gp.Y.tolist(),
    })
    log.info("GP fitted on %d points, alpha=%s", len(ds), np.array2string(alpha, precision=4))
    return EXIT_OK


def load_model(cfg: RunConfig, out: Path):
    doc = json.loads(_need(out, MODEL, "fit-gp").read_text())
    if doc["known_system"]:
        return cfg.system
    k = doc["kernel"]
    return GPModel(np.array(doc["Z"]), np.array(doc["Y"]),
                   KernelConfig(k["signal_variance"], tuple(k["lengthscales"]), k["noise_variance"]))


def stage_bounds(cfg: RunConfig, out: Path) -> int:
    model = load_model(cfg, out)
    err = None if cfg.known_system else cfg.error
    t = time.perf_counter()
    matrix = build_matrix(model, cfg.noise, cfg.partition(), err, splits=cfg.splits)
    log.info("interval matrix %s built in %.1fs", matrix.lower.shape, time.perf_counter() - t)
    matrix.to_json(out / BOUNDS)
    return EXIT_OK


def stage_prune(cfg: RunConfig, out: Path) -> int:
    matrix = TransitionIntervalMatrix.from_json(json.loads(_need(out, BOUNDS, "bounds").read_text()))
    part = cfg.partition()
    initial = part.initial_cell_indices
    res = synthesize_permissible_set(matrix, initial, cfg.N, cfg.p, backend=cfg.backend)
    problems = verify_certificate(res.certificate, matrix, initial)
    if problems:
        raise RuntimeError("certificate failed re-verification: " + "; ".join(problems[:5]))
    _write_json(out / CERTIFICATE, res.certificate.to_dict())
    if not isinstance(res, PermissibleStrategySet):
        _write_json(out / PERMISSIBLE, res.to_dict())
        print(f"infeasible: state cell {res.cell} lost every control cell after "
              f"{len(res.removal_log)} removals", file=sys.stderr)
        return EXIT_INFEASIBLE
    doc = res.to_dict()
    doc["n_controls"] = res.n_controls
    _write_json(out / PERMISSIBLE, doc)
    log.info("retained %.1f%% of pairs, bound %.6g", 100 * res.retained_fraction, res.certificate.safety_lower_bound)
    return EXIT_OK


def stage_validate(cfg: RunConfig, out: Path) -> int:
    doc = json.loads(_need(out, PERMISSIBLE, "prune").read_text())
    if doc.get("infeasible"):
        raise ValueError(f"{out / PERMISSIBLE} records an infeasible pruning run; nothing to validate")
    if not cfg.system.known:
        _write_json(out / VALIDATION, {"skipped": "system dynamics unknown; validation needs the true system"})
        return EXIT_OK
    strategy = PermissibleStrategySet.from_dict(doc)
    part = cfg.partition()
    rep = monte_carlo(cfg.system, cfg.noise, strategy, part, cfg.initial_set, cfg.N, cfg.trials,
                      seed=substream_seed(cfg.seed, "validation"), keep=cfg.keep_trajectories)
    full, perm = adversarial_contrast(cfg.system, cfg.noise, part, strategy, default_start(cfg), cfg.N,
                                      seed=substream_seed(cfg.seed, "adversary"))
    rep.adversarial_full_set_exited = full.exited
    rep.adversarial_permissible_exited = perm.exited
    trajs = rep.trajectories + [full, perm]
    report = rep.to_dict()
    # trial numbers of the two adversarial rollouts in trajectories.csv
    report["adversarial_trial_ids"] = {"full_set": len(trajs) - 2, "permissible_set": len(trajs) - 1}
    _write_json(out / VALIDATION, report)
    write_trajectories(out / TRAJECTORIES, trajs, part.safe_set)
    if not rep.consistent:
        log.warning("violation frequency %.4g exceeds the certified limit %.4g", rep.violations / rep.trials,
                    rep.violation_limit)
    return EXIT_OK


STAGE_FUNCS = {"gen-data": stage_gen_data, "fit-gp": stage_fit_gp, "bounds": stage_bounds,
               "prune": stage_prune, "validate": stage_validate}


def summary_line(out: Path, wall: float) -> str:
    perm = json.loads((out / PERMISSIBLE).read_text()) if (out / PERMISSIBLE).exists() else {}
    if perm.get("infeasible"):
        return f"infeasible (cell {perm['cell']}) wall_time={wall:.1f}s"
    cert = perm.get("certificate", {})
    return (f"safety_bound={cert.get('safety_lower_bound', float('nan')):.10g} "
            f"retained_fraction={perm.get('retained_fraction', float('nan')):.4f} wall_time={wall:.1f}s")


def run_pipeline(cfg: RunConfig, out: Path, stages=STAGES) -> int:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    for name in stages:
        log.info("stage %s", name)
        code = STAGE_FUNCS[name](cfg, out)
        if code != EXIT_OK:
            break
    if "prune" in stages or "validate" in stages:
        line = summary_line(out, time.perf_counter() - t0)
        if stages == STAGES:
            (out / SUMMARY).write_text(line + "\n")
        print(line)
    return code


# -- argument handling -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--out", help="output directory (overrides [run] out)")
    common.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
    common.add_argument("--p", type=float, help="safety threshold (overrides [synthesis] p)")
    common.add_argument("--threads", type=int, help="worker threads for compiled kernels")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="gpbarrier", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="all stages in order")
    run.add_argument("--stage", choices=STAGES, help="run only this stage")
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=f"{name} stage only")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(p=args.p, seed=args.seed, out=args.out)
        if args.threads is not None:
            _accel.set_threads(args.threads)
        out = Path(cfg.out)
        if args.command == "run" and args.stage is None:
            return run_pipeline(cfg, out)
        stage = args.stage if args.command == "run" else args.command
        return run_pipeline(cfg, out, (stage,))
    except (ConfigError, MissingArtifact, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
