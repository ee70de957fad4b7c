"""Command-line entry point: ``raman2d <command> [options]``.

Exit codes: 0 success, 2 configuration/argument error, 3 numerical
failure, 4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, SimConfig, load_config
from .model import (ModelFormatError, TrainConfig, TrainingDivergedError, model_load,
                    model_save, r2_score, train)
from .optimize import (BatchCost, DEError, DeParams, FlatGain, PumpBounds, TargetProfile,
                       cnn_init_bounds, de_optimize)
from .pipeline import DatasetFormatError, DatasetGenerationError, dataset_load, dataset_save, gen_dataset
from .sim import NumericalInstabilityError, propagate, read_profile_csv, write_profile_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("raman2d")


class UsageError(ValueError):
    pass


def _pumps(text: str) -> tuple[float, ...]:
    vals = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        vals.append(-np.inf if tok == "off" else float(tok))
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected four comma-separated pump powers in dBm")
    return tuple(vals)


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config(args) -> SimConfig:
    return load_config(args.config) if args.config else SimConfig()


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, out: Path, cfg: SimConfig | None, inputs=(), outputs=(), extra=None) -> None:
    opts = {k: (v if not isinstance(v, float) or np.isfinite(v) else str(v))
            for k, v in vars(args).items() if k != "func"}
    for k, v in opts.items():
        if isinstance(v, tuple):
            opts[k] = [x if np.isfinite(x) else "off" for x in v]
    manifest = {
        "command": args.command,
        "options": opts,
        "inputs": {str(p): _sha(p) for p in inputs if p},
        "outputs": sorted(str(o) for o in outputs),
    }
    if cfg is not None:
        manifest["config"] = cfg.to_text()
        manifest["config_hash"] = cfg.digest()
    if extra:
        manifest.update(extra)
    ex.write_json(out / "manifest.json", manifest)


def cmd_simulate(args) -> None:
    cfg = _config(args)
    out = _out(args)
    prof = propagate(cfg.pump_config(args.pumps), cfg.fiber, cfg.grids, cfg.step_km)
    write_profile_csv(out / "profile.csv", prof.values, cfg.grids)
    outputs = ["profile.csv"]
    if args.svg:
        ex.save_heatmap_svg(prof.values, out / "profile.svg", cfg.grids)
        outputs.append("profile.svg")
    _manifest(args, out, cfg, [args.config], outputs)


def cmd_gen_dataset(args) -> None:
    cfg = _config(args)
    out = _out(args)
    bounds = PumpBounds(upper=np.minimum(cfg.pump_max, args.pump_cap) if args.pump_cap else cfg.pump_max)
    ds = gen_dataset(args.n, bounds, args.seed, args.noise_sigma, cfg.fiber, cfg.grids, cfg.pump_freqs)
    dataset_save(ds, out / "dataset.rds")
    outputs = ["dataset.rds"]
    if args.csv:
        ds.to_csv(out / "dataset.csv")
        outputs.append("dataset.csv")
    _manifest(args, out, cfg, [args.config], outputs, {"metadata": ds.metadata})


def cmd_train(args) -> None:
    out = _out(args)
    ds = dataset_load(args.dataset)
    n_val = args.n_val if args.n_val is not None else max(1, round(len(ds) * 300 / 4400))
    if n_val >= len(ds):
        raise UsageError("--n-val must be smaller than the dataset")
    train_set, val_set = ds.split(len(ds) - n_val)
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.patience, args.seed)
    model = train(train_set, val_set, config=cfg)
    model_save(model, out / "model.rinv")
    with open(out / "training_curve.csv", "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for e, t, v in model.history:
            fh.write(f"{e},{t!r},{v!r}\n")
    _manifest(args, out, None, [args.dataset], ["model.rinv", "training_curve.csv"],
              {"best_epoch": model.best_epoch})


def cmd_eval(args) -> None:
    cfg = _config(args)
    out = _out(args)
    model = model_load(args.model)
    ds = dataset_load(args.dataset)
    rep = ex.run_testset_eval(model, ds, cfg.evaluator())
    rep.to_csv(out / "testset.csv", ds.pumps)
    summary = rep.stats.summary()
    summary["flagged"] = rep.flagged.tolist()
    summary["failed"] = rep.failed.tolist()
    if len(ds) >= 2 and np.all(np.ptp(ds.pumps, axis=0) > 0):
        summary["r2"] = r2_score(ds.pumps, rep.predictions).tolist()
    ex.write_json(out / "summary.json", summary)
    _manifest(args, out, cfg, [args.config, args.model, args.dataset], ["testset.csv", "summary.json"])


def cmd_design(args) -> None:
    cfg = _config(args)
    out = _out(args)
    evaluator = cfg.evaluator()
    cap = np.minimum(cfg.pump_max, args.pump_cap) if args.pump_cap is not None else np.array(cfg.pump_max)
    bounds = PumpBounds(upper=cap)
    if (args.target is None) == (args.gain is None):
        raise UsageError("give exactly one of --target or --gain")
    if args.target is not None:
        target = read_profile_csv(args.target, cfg.grids)
        spec = TargetProfile(target.values)
    else:
        spec = FlatGain(args.gain, args.m0, args.m1)
    cost = BatchCost(spec, evaluator)
    params = DeParams(max_iterations=args.max_iter, seed=args.seed)
    p_prime = None
    if args.init == "cnn":
        if args.target is None or args.model is None:
            raise UsageError("--init cnn needs --target and --model")
        p_prime = model_load(args.model).predict(target)
        bounds = cnn_init_bounds(p_prime, bounds)
    res = de_optimize(cost, bounds, params, p_prime=p_prime)
    res.to_csv(out / "history.csv")
    best = evaluator(res.best_pumps[None])[0]
    write_profile_csv(out / "profile.csv", best, cfg.grids)
    result = {"best_pumps_dbm": res.best_pumps.tolist(), "best_cost_db": res.best_cost,
              "iterations": res.iterations, "evaluations": res.evaluations,
              "lower_dbm": bounds.lower.tolist(), "upper_dbm": bounds.upper.tolist()}
    if p_prime is not None:
        result["cnn_prediction_dbm"] = p_prime.tolist()
    if isinstance(spec, FlatGain):
        c0, c1 = cost.components(res.best_pumps)
        result.update(j0_db=float(c0[0]), j1_db=float(c1[0]))
    ex.write_json(out / "result.json", result)
    outputs = ["history.csv", "profile.csv", "result.json"]
    if args.svg:
        if args.target is not None:
            ex.save_heatmap_svg(np.abs(best - target.values), out / "error.svg", cfg.grids,
                                label="absolute error (dB)")
            outputs.append("error.svg")
        ex.save_heatmap_svg(best, out / "profile.svg", cfg.grids)
        outputs.append("profile.svg")
    _manifest(args, out, cfg, [args.config, args.target, args.model], outputs)


def cmd_sweep(args) -> None:
    cfg = _config(args)
    out = _out(args)
    levels = ex.equally_spaced_levels(args.start, args.end, args.levels)
    rep = ex.run_flat_gain_sweep(levels, args.pump_cap, args.max_iter, DeParams(seed=args.seed),
                                 args.m0, args.m1, cfg.fiber, cfg.grids, cfg.pump_freqs,
                                 cfg.evaluator())
    rep.to_csv(out / "sweep.csv", out / "convergence.csv")
    ex.write_json(out / "summary.json", rep.summary())
    outputs = ["sweep.csv", "convergence.csv", "summary.json"]
    if args.svg:
        ex.save_curves_svg({"mean cost": rep.average_curve()}, out / "convergence.svg")
        outputs.append("convergence.svg")
    _manifest(args, out, cfg, [args.config], outputs)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="raman2d", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="fiber/pump key-value config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker thread cap")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("simulate", help="simulate one pump configuration")
    common(sp, seed=False)
    sp.add_argument("--pumps", type=_pumps, required=True, help="p1,p2,p3,p4 in dBm ('off' allowed)")
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("gen-dataset", help="generate a random-pump dataset")
    common(sp)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--noise-sigma", type=float, default=0.05)
    sp.add_argument("--pump-cap", type=float)
    sp.add_argument("--csv", action="store_true")
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train", help="train the inverse model")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--n-val", type=int)
    sp.add_argument("--epochs", type=int, default=300)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--patience", type=int, default=20)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a model on a test dataset")
    common(sp, seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("design", help="optimize pumps for a target profile or a flat gain")
    common(sp)
    sp.add_argument("--target", help="target profile CSV")
    sp.add_argument("--gain", type=float, help="flat target gain (dB)")
    sp.add_argument("--m0", type=float, default=0.5)
    sp.add_argument("--m1", type=float, default=0.5)
    sp.add_argument("--init", choices=("random", "cnn"), default="random")
    sp.add_argument("--model", help="inverse model for --init cnn")
    sp.add_argument("--max-iter", type=int, default=100)
    sp.add_argument("--pump-cap", type=float)
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("sweep", help="flat-gain sweep over equally spaced target levels")
    common(sp)
    sp.add_argument("--levels", type=int, default=9)
    sp.add_argument("--start", type=float, default=ex.SIMULATION_LEVELS[0], help="lowest level (dB)")
    sp.add_argument("--end", type=float, default=ex.SIMULATION_LEVELS[1], help="highest level (dB)")
    sp.add_argument("--pump-cap", type=float, default=ex.SIMULATION_PUMP_CAP)
    sp.add_argument("--max-iter", type=int, default=300)
    sp.add_argument("--m0", type=float, default=0.5)
    sp.add_argument("--m1", type=float, default=0.5)
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    import torch
    torch.set_num_threads(max(1, args.threads))
    try:
        args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalInstabilityError, DEError, TrainingDivergedError, DatasetGenerationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DatasetFormatError, ModelFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
