"""Command-line driver.

Subcommands: make-data, train, attack-eval, simulate, evasion-sweep,
collisions, report, and the end-to-end reproduce chain. All randomness is
traceable to --seed (or the config file's seed). Tables go to stdout and are
also written under --out-dir as .json/.csv; progress notes go to stderr.

Exit status: 0 success, 1 runtime failure (with a diagnostic), 2 usage error.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import arena, report
from .attacks import AttackSpec, default_budget
from .config import ConfigError, SimulationConfig
from .data import (DATASET_ROOT_ENV, IngestionError, load_cifar10,
                   resolve_dataset_root, standard_split)
from .detectors import make_detector
from .models import (CheckpointError, TrainConfig, TrainingError,
                     evaluate_accuracy, load_model, save_model, train)
from .synthetic import write_synthetic_cifar10

SEED_COLLISION_DETECTOR = 0xC011


def _note(message: str) -> None:
    print(message, file=sys.stderr)


def _resolve_seed(args, config: SimulationConfig = None) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if config is not None:
        return config.seed
    return 0


def _load_config(args) -> SimulationConfig:
    config = (SimulationConfig.from_file(args.config) if getattr(args, "config", None)
              else SimulationConfig())
    overrides = {}
    for flag, key in (("seed", "seed"), ("trials", "trials"),
                      ("detector", "detector"), ("attack", "attack"),
                      ("evasion_window", "evasion_window"),
                      ("dataset_root", "dataset_root"),
                      ("model_checkpoint", "model_checkpoint")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return config.replace(**overrides) if overrides else config


def _split_for(args, seed: int):
    root = resolve_dataset_root(getattr(args, "dataset_root", None))
    cifar = load_cifar10(root)
    split_seed = int(np.random.SeedSequence([seed, arena.SEED_SPLIT]).generate_state(1)[0])
    return cifar, standard_split(cifar, seed=split_seed)


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out_dir", None) or "results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(out_dir: Path, name: str, layout: str, rows, meta=None) -> None:
    report.save_results(out_dir / f"{name}.json", layout, rows, meta=meta)
    report.write_csv(layout, rows, out_dir / f"{name}.csv")
    print(render_header(name))
    print(report.render_table(layout, rows))


def render_header(name: str) -> str:
    return f"== {name} =="


def cmd_make_data(args) -> int:
    out = Path(args.out_dir or "results") / "synthetic-cifar10"
    seed = _resolve_seed(args)
    _note(f"writing synthetic CIFAR-format dataset (seed {seed}) to {out}")
    write_synthetic_cifar10(out, seed=seed)
    print(out)
    return 0


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    _, split = _split_for(args, seed)
    modes = ("natural", "adversarial") if args.mode == "both" else (args.mode,)
    for mode in modes:
        epochs = args.epochs if args.epochs is not None else (
            4 if mode == "natural" else 3)
        max_ex = args.max_train_examples if args.max_train_examples is not None else (
            20_000 if mode == "natural" else 10_000)
        config = TrainConfig(arch=args.arch, epochs=epochs, batch_size=args.batch_size,
                             lr=args.lr, max_train_examples=max_ex, seed=seed)
        started = time.time()
        _note(f"training {mode} {args.arch} ({epochs} epochs, "
              f"{max_ex or len(split.train)} examples)")
        model = train(split, mode, config)
        path = out / f"model_{mode}.pt"
        save_model(model, path)
        accuracy = evaluate_accuracy(model, split.eval)
        _note(f"  saved {path} in {time.time() - started:.0f}s; "
              f"clean accuracy {accuracy * 100:.2f}%")
        print(path)
    return 0


def _eval_specs(args):
    pgd = AttackSpec("pgd", default_budget("pgd", max_rounds=args.pgd_eval_rounds))
    square = AttackSpec("square", default_budget("square", max_rounds=args.square_eval_rounds))
    return pgd, square


def cmd_attack_eval(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    _, split = _split_for(args, seed)
    natural = load_model(args.natural_checkpoint or out / "model_natural.pt")
    adversarial = load_model(args.adversarial_checkpoint or out / "model_adversarial.pt")
    pgd, square = _eval_specs(args)
    rows = arena.accuracy_table_rows(natural, adversarial, split.eval, pgd, square,
                                     seed=seed, max_attacked=args.max_attacked)
    _emit(out, "accuracy", "accuracy", rows)
    return 0


def _simulation_rows(config: SimulationConfig, stats, model) -> list:
    row = report.flatten_stats(stats)
    row.update(detector=config.detector, training=model.training_mode,
               attack=config.attack, evasion_window=config.evasion_window)
    return [row]


def cmd_simulate(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    model, split = arena.load_experiment_inputs(config)
    stats = arena.run_experiment(config, model=model, split=split)
    layout = "attacker" if config.detector == "none" else "detector"
    _emit(out, config.name, layout, _simulation_rows(config, stats, model),
          meta={"config": config.to_dict()})
    return 0


def cmd_evasion_sweep(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    windows = [int(w) for w in args.windows.split(",")] if args.windows else list(
        arena.DEFAULT_EVASION_WINDOWS)
    model, split = arena.load_experiment_inputs(config)
    rows = []
    for window, stats in arena.run_evasion_sweep(config, windows, model=model, split=split):
        row = report.flatten_stats(stats)
        row.update(attack=config.attack, evasion_window=window)
        rows.append(row)
    _emit(out, f"{config.name}-evasion", "evasion", rows,
          meta={"config": config.to_dict(), "windows": windows})
    return 0


def cmd_collisions(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    root = resolve_dataset_root(args.dataset_root)
    cifar = load_cifar10(root)
    dataset = {"cifar10-test": cifar.test, "cifar10-train": cifar.train}[args.dataset]
    detector_seed = int(np.random.SeedSequence(
        [seed, SEED_COLLISION_DETECTOR]).generate_state(1)[0])
    detector = make_detector(args.detector, seed=detector_seed, window=args.cache_window)
    started = time.time()
    count = arena.collision_study(detector, dataset)
    _note(f"streamed {len(dataset)} queries in {time.time() - started:.0f}s")
    rows = [{"dataset": dataset.name, "samples": len(dataset),
             "classes": dataset.num_classes, "collisions": count}]
    _emit(out, f"collisions-{args.dataset}", "collisions", rows)
    return 0


def cmd_report(args) -> int:
    results_dir = Path(args.results_dir or args.out_dir or "results")
    paths = sorted(results_dir.glob("*.json"))
    if not paths:
        raise ConfigError(f"no result .json files found in {results_dir}")
    for path in paths:
        payload = report.load_results(path)
        text = report.render_table(payload["layout"], payload["rows"])
        report.write_csv(payload["layout"], payload["rows"], path.with_suffix(".csv"))
        path.with_suffix(".txt").write_text(text)
        print(render_header(path.stem))
        print(text)
    return 0


def cmd_reproduce(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args)
    try:
        resolve_dataset_root(args.dataset_root)
    except IngestionError:
        data_dir = out / "synthetic-cifar10"
        if not (data_dir / "test_batch.bin").exists():
            _note(f"no dataset root given; writing synthetic data to {data_dir}")
            write_synthetic_cifar10(data_dir, seed=seed)
        args.dataset_root = str(data_dir)

    trials = args.trials or 100
    cmd_train(args)
    cmd_attack_eval(args)

    model_ckpts = {"natural": out / "model_natural.pt",
                   "adversarial": out / "model_adversarial.pt"}
    base = SimulationConfig(dataset_root=args.dataset_root, seed=seed, trials=trials)

    # no-detector visibility games
    rows = []
    for training in ("natural", "adversarial"):
        model, split = None, None
        for attack in ("pgd", "square"):
            cfg = base.replace(name=f"visibility-{training}-{attack}", attack=attack,
                               model_checkpoint=str(model_ckpts[training]),
                               max_rounds=150 if attack == "pgd" else 400)
            model, split = arena.load_experiment_inputs(cfg)
            stats = arena.run_experiment(cfg, model=model, split=split)
            row = report.flatten_stats(stats)
            row.update(training=training, attack=attack)
            rows.append(row)
            _note(f"visibility {training}/{attack}: attacker wins {stats.attacker.count}")
    _emit(out, "visibility", "attacker", rows)

    # detector games on both models
    rows = []
    for detector in ("linf", "lsh", "blacklight"):
        for training in ("natural", "adversarial"):
            for attack in ("pgd", "square"):
                cfg = base.replace(name=f"detect-{detector}-{training}-{attack}",
                                   attack=attack, detector=detector, max_rounds=30,
                                   model_checkpoint=str(model_ckpts[training]))
                model, split = arena.load_experiment_inputs(cfg)
                stats = arena.run_experiment(cfg, model=model, split=split)
                row = report.flatten_stats(stats)
                row.update(detector=detector, training=training, attack=attack)
                rows.append(row)
                _note(f"detector {detector}/{training}/{attack}: "
                      f"defender wins {stats.defender.count}")
    _emit(out, "detection", "detector", rows)

    # evasion sweep: blacklight vs PGD on the adversarially trained model
    sweep_cfg = base.replace(name="evasion", attack="pgd", detector="blacklight",
                             max_rounds=10,
                             model_checkpoint=str(model_ckpts["adversarial"]))
    model, split = arena.load_experiment_inputs(sweep_cfg)
    rows = []
    for window, stats in arena.run_evasion_sweep(sweep_cfg, model=model, split=split):
        row = report.flatten_stats(stats)
        row.update(attack="pgd", evasion_window=window)
        rows.append(row)
        _note(f"evasion window {window}: attacker wins {stats.attacker.count}")
    _emit(out, "evasion", "evasion", rows)

    cmd_collisions(args)
    return 0


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="simulation config file (YAML)")
    shared.add_argument("--seed", type=int, help="master seed (default: config seed or 0)")
    shared.add_argument("--dataset-root",
                        help=f"CIFAR-10 binary dataset directory (or ${DATASET_ROOT_ENV})")
    shared.add_argument("--out-dir", help="directory for results (default: results)")

    parser = argparse.ArgumentParser(
        prog="querygame",
        description="Attacker-vs-defender query games against image classifiers")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("make-data", parents=[shared],
                            help="write a synthetic CIFAR-format dataset")
    p.set_defaults(func=cmd_make_data)

    p = commands.add_parser("train", parents=[shared], help="train victim models")
    p.add_argument("--mode", choices=("natural", "adversarial", "both"), default="both")
    p.add_argument("--arch", choices=("small_cnn", "resnet18"), default="small_cnn")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-train-examples", type=int)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("attack-eval", parents=[shared],
                            help="clean/PGD/Square accuracy table")
    p.add_argument("--natural-checkpoint")
    p.add_argument("--adversarial-checkpoint")
    p.add_argument("--max-attacked", type=int, default=256,
                   help="evaluation subset size for attacked accuracy")
    p.add_argument("--pgd-eval-rounds", type=int, default=10)
    p.add_argument("--square-eval-rounds", type=int, default=60)
    p.set_defaults(func=cmd_attack_eval)

    p = commands.add_parser("simulate", parents=[shared],
                            help="run one attacker-vs-defender experiment")
    p.add_argument("--trials", type=int)
    p.add_argument("--detector", choices=("none", "linf", "lsh", "blacklight"))
    p.add_argument("--attack", choices=("pgd", "square"))
    p.add_argument("--evasion-window", type=int)
    p.add_argument("--model-checkpoint")
    p.set_defaults(func=cmd_simulate)

    p = commands.add_parser("evasion-sweep", parents=[shared],
                            help="experiments over benign-interleaving windows")
    p.add_argument("--trials", type=int)
    p.add_argument("--attack", choices=("pgd", "square"))
    p.add_argument("--detector", choices=("linf", "lsh", "blacklight"))
    p.add_argument("--model-checkpoint")
    p.add_argument("--windows", help="comma-separated window sizes (default 0,7,15,35)")
    p.set_defaults(func=cmd_evasion_sweep)

    p = commands.add_parser("collisions", parents=[shared],
                            help="false-positive collision study over a dataset")
    p.add_argument("--detector", choices=("linf", "lsh", "blacklight"),
                   default="blacklight")
    p.add_argument("--dataset", choices=("cifar10-test", "cifar10-train"),
                   default="cifar10-test")
    p.add_argument("--cache-window", type=int, default=None,
                   help="bounded cache size (default: unbounded)")
    p.set_defaults(func=cmd_collisions)

    p = commands.add_parser("report", parents=[shared],
                            help="re-render tables from stored results")
    p.add_argument("--results-dir")
    p.set_defaults(func=cmd_report)

    p = commands.add_parser("reproduce", parents=[shared],
                            help="train, evaluate, simulate, sweep, and collide "
                                 "end to end at desk scale")
    p.add_argument("--trials", type=int)
    p.add_argument("--mode", default="both", help=argparse.SUPPRESS)
    p.add_argument("--arch", default="small_cnn", help=argparse.SUPPRESS)
    p.add_argument("--epochs", type=int, help=argparse.SUPPRESS)
    p.add_argument("--batch-size", type=int, default=128, help=argparse.SUPPRESS)
    p.add_argument("--lr", type=float, default=1e-3, help=argparse.SUPPRESS)
    p.add_argument("--max-train-examples", type=int, help=argparse.SUPPRESS)
    p.add_argument("--natural-checkpoint", help=argparse.SUPPRESS)
    p.add_argument("--adversarial-checkpoint", help=argparse.SUPPRESS)
    p.add_argument("--max-attacked", type=int, default=256, help=argparse.SUPPRESS)
    p.add_argument("--pgd-eval-rounds", type=int, default=10, help=argparse.SUPPRESS)
    p.add_argument("--square-eval-rounds", type=int, default=60, help=argparse.SUPPRESS)
    p.add_argument("--detector", default="blacklight", help=argparse.SUPPRESS)
    p.add_argument("--dataset", default="cifar10-test", help=argparse.SUPPRESS)
    p.add_argument("--cache-window", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except (ConfigError, IngestionError, TrainingError, CheckpointError,
            report.RenderError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
