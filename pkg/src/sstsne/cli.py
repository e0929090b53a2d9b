"""Command line entry points: embedding runs, labeling simulation, active
learning comparisons, the session server, and synthetic data generation.

Every command writes its outputs under --out together with a manifest.json
recording the effective configuration, seed and library versions, so a run
is reproducible from its manifest alone. Config precedence is flags over
config file (a flat JSON document) over defaults.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numba
import numpy as np

from . import __version__, activelearn, emulator, metrics, service
from .activelearn import ALConfig
from .dataset import (DataError, Dataset, kfold_split, load_dataset,
                      make_synthetic_gaussians, write_features_tsv,
                      write_labels_tsv)
from .engine import Engine, EngineError, TsneConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_ENGINE_FIELDS = tuple(f.name for f in dataclasses.fields(TsneConfig))
_AL_FIELDS = tuple(f.name for f in dataclasses.fields(ALConfig))
_TUPLE_FIELDS = ("alpha_epochs", "momentum_lo_hi")
_STRATEGY_CHOICES = (*activelearn.STRATEGIES, "tsne", "all")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise DataError(f"config file is not valid JSON: {exc}")
    if not isinstance(payload, dict):
        raise DataError("config file must hold a flat JSON object")
    return payload


def _merge_engine_config(args, file_cfg: dict) -> TsneConfig:
    kwargs = {}
    for name in _ENGINE_FIELDS:
        value = getattr(args, name, None)
        if value is None and name in file_cfg:
            value = file_cfg[name]
        if value is not None:
            kwargs[name] = tuple(value) if name in _TUPLE_FIELDS else value
    return TsneConfig(**kwargs)


def _merge_al_config(args, file_cfg: dict) -> ALConfig:
    kwargs = {}
    for name in _AL_FIELDS:
        value = getattr(args, name, None)
        if value is None and name in file_cfg:
            value = file_cfg[name]
        if value is not None:
            kwargs[name] = value
    return ALConfig(**kwargs)


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, config, outputs: list[str],
                    extra: dict | None = None) -> None:
    if dataclasses.is_dataclass(config):
        config = dataclasses.asdict(config)
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "outputs": outputs,
        "versions": {"sstsne": __version__,
                     "python": sys.version.split()[0],
                     "numpy": np.__version__,
                     "numba": numba.__version__},
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_inputs(args, require_labels: bool) -> Dataset:
    labels = getattr(args, "labels", None)
    if require_labels and labels is None:
        raise DataError("this command requires --labels")
    return load_dataset(args.features, labels, name=Path(args.features).stem)


def cmd_embed(args) -> int:
    out = _prepare_out(args)
    dataset = _load_inputs(args, require_labels=False)
    config = _merge_engine_config(args, _load_config_file(args.config))
    engine = Engine(dataset, config)
    if dataset.true_labels is not None:
        for i in range(dataset.n):
            engine.label(i, int(dataset.true_labels[i]))
    engine.step(config.e_max)

    positions = out / "positions.tsv"
    np.savetxt(positions, engine.state.y, delimiter="\t", fmt="%.10g")
    checkpoint = out / "checkpoint.bin"
    engine.save(checkpoint)
    _write_manifest(out, "embed", config,
                    [positions.name, checkpoint.name],
                    {"dataset": {"n": dataset.n, "dim": dataset.dim},
                     "kl_divergence": engine.kl()})
    print(f"embedded {dataset.n} samples for {engine.epoch} epochs -> {positions}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _prepare_out(args)
    dataset = _load_inputs(args, require_labels=True)
    config = _merge_engine_config(args, _load_config_file(args.config))
    stride = args.knn_stride
    engine = Engine(dataset, config)

    snapshots = []
    while engine.epoch < config.s:
        if engine.epoch % stride == 0:
            snapshots.append((engine.epoch, engine.state.y.copy()))
        engine.step(1)

    def on_event(event) -> bool:
        if event.epoch % stride == 0:
            snapshots.append((event.epoch, engine.state.y.copy()))
        return False

    log = emulator.run_session(engine, on_event=on_event)
    snapshots.append((engine.epoch, engine.state.y.copy()))

    actions_csv = out / "actions.csv"
    log.to_csv(actions_csv)
    knn_csv = out / "knn_epochs.csv"
    curve = metrics.knn_over_epochs(snapshots, dataset.true_labels, k=args.knn_k)
    with open(knn_csv, "w") as fh:
        fh.write("epoch,mean_accuracy\n")
        for epoch, acc in curve:
            fh.write(f"{epoch},{acc:.6f}\n")
    checkpoint = out / "checkpoint.bin"
    engine.save(checkpoint)
    _write_manifest(out, "simulate", config,
                    [actions_csv.name, knn_csv.name, checkpoint.name],
                    {"events": len(log), "total_labels": log.total_labels,
                     "total_actions": log.total_actions})
    print(f"simulated {len(log)} events: {log.total_labels} labels for "
          f"{log.total_actions} actions -> {actions_csv}")
    return EXIT_OK


def _active_task(payload):
    dataset, fold, strategy, al_config, engine_config = payload
    if strategy == "tsne":
        return activelearn.run_tsne_strategy(dataset, [fold], engine_config,
                                             al_config)[0]
    return activelearn.run_active_learning(dataset, [fold], strategy,
                                           al_config)[0]


def cmd_active(args) -> int:
    out = _prepare_out(args)
    dataset = _load_inputs(args, require_labels=True)
    file_cfg = _load_config_file(args.config)
    engine_config = _merge_engine_config(args, file_cfg)
    al_config = _merge_al_config(args, file_cfg)
    folds = kfold_split(dataset.n, k=args.folds, seed=al_config.seed)
    strategies = list(_STRATEGY_CHOICES[:-1]) if args.strategy == "all" else [args.strategy]

    tasks = [(dataset, fold, strategy, al_config, engine_config)
             for strategy in strategies for fold in folds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            curves = list(pool.map(_active_task, tasks))
    else:
        curves = [_active_task(task) for task in tasks]

    references = {fold.fold_id: activelearn.reference_accuracy(dataset, fold, al_config)
                  for fold in folds}
    summary = {}
    for strategy in strategies:
        values = [activelearn.actions_to_fraction(c, references[c.fold_id])
                  for c in curves if c.strategy == strategy]
        finite = [v for v in values if math.isfinite(v)]
        summary[strategy] = sum(finite) / len(finite) if len(finite) == len(values) and values else math.inf

    curves_csv = out / "curves.csv"
    activelearn.write_curves_csv(curves_csv, curves)
    summary_csv = out / "summary.csv"
    activelearn.write_summary_csv(summary_csv, summary)
    _write_manifest(out, "active", engine_config,
                    [curves_csv.name, summary_csv.name],
                    {"al_config": dataclasses.asdict(al_config),
                     "strategies": strategies,
                     "reference_accuracy": references})
    for strategy, value in summary.items():
        print(f"{strategy}: mean actions to threshold = "
              f"{'inf' if math.isinf(value) else f'{value:.1f}'}")
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        service.serve(args.data, host=args.host, port=args.port)
    except (OSError, SystemExit) as exc:
        print(f"server failed to start: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def cmd_synth(args) -> int:
    out = _prepare_out(args)
    dataset = make_synthetic_gaussians(k_classes=args.classes,
                                       n_per_class=args.per_class,
                                       dim=args.dim,
                                       separation=args.separation,
                                       noise=args.noise,
                                       seed=args.seed)
    features = out / "features.tsv"
    labels = out / "labels.tsv"
    write_features_tsv(dataset.features, features)
    write_labels_tsv(dataset.true_labels, dataset.class_names, labels)
    _write_manifest(out, "synth",
                    {"classes": args.classes, "per_class": args.per_class,
                     "dim": args.dim, "separation": args.separation,
                     "noise": args.noise, "seed": args.seed},
                    [features.name, labels.name])
    print(f"wrote {dataset.n} x {dataset.dim} synthetic samples -> {features}")
    return EXIT_OK


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--out-dims", type=int, dest="out_dims")
    parser.add_argument("--perplexity", type=float)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--theta-k", type=float, dest="theta_k")
    parser.add_argument("--f", type=float)
    parser.add_argument("--r", type=float)
    parser.add_argument("--s", type=int)
    parser.add_argument("--ramp-epochs", type=int, dest="ramp_epochs")
    parser.add_argument("--e-max", type=int, dest="e_max")
    parser.add_argument("--eta", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--init-mode", choices=("pca", "random"), dest="init_mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sstsne",
                                     description="semi-supervised t-SNE labeling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_embed = sub.add_parser("embed", help="optimize an embedding to e_max")
    p_embed.add_argument("features", help="headerless TSV feature matrix")
    p_embed.add_argument("--labels", help="optional labels TSV (pre-labeled run)")
    p_embed.add_argument("--out", required=True)
    _add_engine_flags(p_embed)
    p_embed.set_defaults(func=cmd_embed)

    p_sim = sub.add_parser("simulate", help="run an emulated labeling session")
    p_sim.add_argument("features")
    p_sim.add_argument("labels")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--knn-stride", type=int, default=50, dest="knn_stride")
    p_sim.add_argument("--knn-k", type=int, default=4, dest="knn_k")
    _add_engine_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_act = sub.add_parser("active", help="active-learning strategy comparison")
    p_act.add_argument("features")
    p_act.add_argument("labels")
    p_act.add_argument("--out", required=True)
    p_act.add_argument("--strategy", choices=_STRATEGY_CHOICES, default="all")
    p_act.add_argument("--folds", type=int, default=5)
    p_act.add_argument("--jobs", type=int, default=1)
    p_act.add_argument("--batch", type=int)
    p_act.add_argument("--budget", type=int)
    p_act.add_argument("--train-epochs", type=int, dest="train_epochs")
    p_act.add_argument("--reference-epochs", type=int, dest="reference_epochs")
    _add_engine_flags(p_act)
    p_act.set_defaults(func=cmd_active)

    p_serve = sub.add_parser("serve", help="launch the session server")
    p_serve.add_argument("--data", help="dataset directory root")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)

    p_synth = sub.add_parser("synth", help="generate synthetic Gaussian data")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--classes", type=int, default=5)
    p_synth.add_argument("--per-class", type=int, default=200, dest="per_class")
    p_synth.add_argument("--dim", type=int, default=32)
    p_synth.add_argument("--separation", type=float, default=10.0)
    p_synth.add_argument("--noise", type=float, default=1.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EngineError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
