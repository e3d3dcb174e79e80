"""Command-line entry point: ``groundspan {train,generate,certify,export}``.

Exit codes: 0 success, 2 invalid input (config, flags, file contents),
3 runtime failure (missing artifacts, divergence, infeasible oracle).
"""
import argparse
import datetime
import hashlib
import json
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .exceptions import (
    CapabilityError,
    ConfigError,
    ContractError,
    MissingCacheError,
    TrainingDiverged,
)
from .features import write_similarity_csv
from .pipeline import (
    certification_settings,
    certify_ensemble,
    generate_ensemble,
    heatmaps,
    load_ensemble,
    load_generator,
    overlap_rows,
    save_ensemble,
)
from .spanlab import write_overlaps_csv, write_report
from .trainer import TrainConfig, load_config, train

log = logging.getLogger("groundspan")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3

PRESETS = ("mg_n9", "mg_n10", "aklt_n10", "xxz_n8", "mg_n5_exact", "mg_n5_shots", "mg_n6_shots")

RUN_LAYOUT = {
    "config": "config.json",
    "manifest": "manifest.json",
    "log": "log.csv",
    "checkpoints": "checkpoints/",
    "final_checkpoint": "final.npz",
    "ensemble": "ensemble.npz",
    "report": "report.json",
    "overlaps": "overlaps.csv",
}


def preset_config(name):
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("groundspan.presets").joinpath(f"{name}.json").read_text()
    return TrainConfig.from_dict(json.loads(text))


def _resolve_config(args):
    if bool(args.config) == bool(args.preset):
        raise ConfigError("--config/--preset", "give exactly one of --config or --preset")
    config = load_config(args.config) if args.config else preset_config(args.preset)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _config_hash(config):
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args):
    config = _resolve_config(args)
    out = Path(args.out or f"runs/{config.name or config.model.lower()}_seed{config.seed}")
    out.mkdir(parents=True, exist_ok=True)
    snapshot = out / RUN_LAYOUT["config"]
    if args.resume and snapshot.exists():
        previous = load_config(snapshot)
        if _config_hash(previous) != _config_hash(config):
            raise ConfigError("--resume", f"config differs from the snapshot in {snapshot}")
    _write_json(snapshot, config.to_dict())
    manifest = {
        "version": __version__,
        "config_source": args.config or f"preset:{args.preset}",
        "config_sha256": _config_hash(config),
        "seed": config.seed,
        "model": config.model,
        "n_sites": config.n_sites,
        "mode": config.gradient_mode,
        "started": _now(),
        "layout": RUN_LAYOUT,
    }
    _write_json(out / RUN_LAYOUT["manifest"], manifest)
    result = train(config, out, resume=args.resume, progress_every=args.progress)
    count = config.generate_count if args.count is None else args.count
    params, _ = load_generator(out / RUN_LAYOUT["final_checkpoint"])
    ensemble = generate_ensemble(params, config, count, config.seed)
    save_ensemble(out / RUN_LAYOUT["ensemble"], ensemble, config, config.seed)
    report = _certify_to(out, ensemble, config)
    manifest.update(
        finished=_now(),
        converged=result.converged,
        stop_reason=result.reason,
        iterations=result.iterations,
        reference_energy=result.reference_energy,
        elapsed_seconds=round(result.elapsed, 3),
        acceptance_rate=report["acceptance_rate"],
        rank=report["rank"],
    )
    _write_json(out / RUN_LAYOUT["manifest"], manifest)
    print(f"{out}: {result.reason} after {result.iterations} iterations; "
          f"acceptance {report['acceptance_rate']:.3f}, rank {report['rank']}")
    return EXIT_OK


def _certify_to(out_dir, ensemble, config, report_path=None):
    settings = certification_settings(config)
    report, accepted, ground = certify_ensemble(ensemble, config, settings)
    write_overlaps_csv(Path(out_dir) / RUN_LAYOUT["overlaps"], overlap_rows(accepted, ground), accepted.indices)
    write_report(report_path or Path(out_dir) / RUN_LAYOUT["report"], report)
    return report


def _checkpoint_path(target):
    path = Path(target)
    if path.is_dir():
        path = path / RUN_LAYOUT["final_checkpoint"]
    if not path.exists():
        raise MissingCacheError(f"checkpoint not found: {path}")
    return path


def cmd_generate(args):
    params, config = load_generator(_checkpoint_path(args.checkpoint))
    seed = config.seed if args.seed is None else args.seed
    count = config.generate_count if args.count is None else args.count
    if count < 0:
        raise ConfigError("--count", "must be >= 0")
    out = Path(args.out or "ensemble.npz")
    out.parent.mkdir(parents=True, exist_ok=True)
    ensemble = generate_ensemble(params, config, count, seed)
    save_ensemble(out, ensemble, config, seed)
    print(f"wrote {count} states to {out}")
    return EXIT_OK


def cmd_certify(args):
    ensemble, config, _ = load_ensemble(args.ensemble)
    if args.config or args.preset:
        override = _resolve_config(args)
        if (override.model, override.n_sites) != (config.model, config.n_sites):
            raise ContractError(
                f"ensemble is for {config.model} with {config.n_sites} sites, "
                f"config is for {override.model} with {override.n_sites}"
            )
        config = config.replace(certification=override.certification)
    out = Path(args.out or "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    report = _certify_to(out.parent, ensemble, config, out)
    print(f"acceptance {report['acceptance_rate']:.3f}, rank {report['rank']} -> {out}")
    return EXIT_OK


def _require(path):
    if not path.exists():
        raise MissingCacheError(f"missing run artifact: {path}")
    return path


def cmd_export(args):
    run = Path(args.run_dir)
    out = Path(args.out or run / "export")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.what == "dynamics":
        dest = out / "dynamics.csv"
        shutil.copyfile(_require(run / RUN_LAYOUT["log"]), dest)
        written.append(dest)
    else:
        ensemble, config, _ = load_ensemble(_require(run / RUN_LAYOUT["ensemble"]))
        report, accepted, ground = certify_ensemble(ensemble, config)
        if args.what == "overlaps":
            dest = out / "overlaps.csv"
            write_overlaps_csv(dest, overlap_rows(accepted, ground), accepted.indices)
            written.append(dest)
        else:
            maps = heatmaps(accepted, ground, config, report.get("orthogonal_subset"))
            for (source, kind), matrix in maps.items():
                prefix = "g" if source == "exact" else "s"
                dest = out / f"heatmap_{source}_{kind}.csv"
                write_similarity_csv(dest, matrix, [f"{prefix}{i + 1}" for i in range(matrix.shape[0])])
                written.append(dest)
    for path in written:
        print(path)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="groundspan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a generator and certify its ensemble")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--preset", help=f"bundled config: {', '.join(PRESETS)}")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", help="run directory")
    p.add_argument("--count", type=int, help="ensemble size generated after training")
    p.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in --out")
    p.add_argument("--progress", type=int, default=0, help="log every N iterations (with -v)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample an ensemble from a trained generator")
    p.add_argument("checkpoint", help="checkpoint file or run directory")
    p.add_argument("--count", type=int, help="number of states (default 1500)")
    p.add_argument("--seed", type=int, help="sampling seed (default: the training seed)")
    p.add_argument("--out", help="ensemble .npz path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("certify", help="certify an ensemble against exact diagonalization")
    p.add_argument("ensemble", help="ensemble .npz file")
    p.add_argument("--config", help="take certification thresholds from this config")
    p.add_argument("--preset", help="take certification thresholds from this preset")
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("export", help="write plot-ready CSVs from a run directory")
    p.add_argument("run_dir")
    p.add_argument("what", choices=("dynamics", "overlaps", "heatmaps"))
    p.add_argument("--out", help="output directory (default RUN_DIR/export)")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (MissingCacheError, CapabilityError, TrainingDiverged, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
