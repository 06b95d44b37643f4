"""Command-line entry point: generate data, train, match meshes and evaluate."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from loguru import logger as loguru_logger
from pydantic import ValidationError

from bendgraph.config_paths import CONFIG_PATH, DATASET_DIR, LOG_DIR, ROOT, RUNS_DIR
from meshes.synthetic import generate_dataset
from models.train_config import TrainConfig
from services.checkpoint_store import CheckpointStore, resolve_checkpoint
from services.dataset_store import read_dataset, write_dataset
from services.evaluate import evaluate
from services.match import load_model, run_match
from services.train import train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_CHECKPOINT = 2

logger = logging.getLogger("bendgraph.app")
_SINK_IDS: List[int] = []
LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <7} | {name}:{function} - {message} | {extra}"


def load_config(path: Path = CONFIG_PATH) -> Dict[str, object]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path.name} is missing")
    if path.suffix.lower() != ".json":
        return {"train": TrainConfig.from_file(path).model_dump()}
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)


def configure_logging(config: Dict[str, object]) -> None:
    global _SINK_IDS
    settings = config.get("logging", {})
    level = str(settings.get("level", "INFO")).upper()
    logging.basicConfig(level=level, format="[%(levelname)s] %(message)s")
    log_path = Path(settings.get("log_path", LOG_DIR / "bendgraph.log"))
    if not log_path.is_absolute():
        log_path = ROOT / log_path
    log_path.parent.mkdir(parents=True, exist_ok=True)
    for sink_id in _SINK_IDS:
        loguru_logger.remove(sink_id)
    if not _SINK_IDS:
        loguru_logger.remove()
    _SINK_IDS = [
        loguru_logger.add(lambda message: sys.stderr.write(message), level=level, format=LOG_FORMAT),
        loguru_logger.add(log_path, level=level, format=LOG_FORMAT, rotation="10 MB", retention=5, enqueue=True),
    ]


def train_config(config: Dict[str, object], args: argparse.Namespace) -> TrainConfig:
    base = TrainConfig.model_validate(config.get("train", {}))
    return base.with_overrides(
        epochs=getattr(args, "epochs", None),
        seed=getattr(args, "seed", None),
        n_seeds=getattr(args, "n_seeds", None),
    )


# --- subcommands


def cmd_gen(config: Dict[str, object], args: argparse.Namespace) -> int:
    synthetic = dict(config.get("synthetic", {}))
    for key in ("base", "resolution", "pairs", "max_bend", "max_twist", "max_bump"):
        value = getattr(args, key, None)
        if value is not None:
            synthetic[key] = value
    seed = args.seed if args.seed is not None else int(config.get("train", {}).get("seed", 0))
    samples = generate_dataset(
        int(synthetic.get("pairs", 10)),
        synthetic.get("base", "cylinder"),
        int(synthetic.get("resolution", 24)),
        np.random.default_rng(seed),
        max_bend=float(synthetic.get("max_bend", np.pi / 3)),
        max_twist=float(synthetic.get("max_twist", 0.0)),
        max_bump=float(synthetic.get("max_bump", 0.0)),
    )
    stats = write_dataset(samples, args.out)
    print(f"Dataset: {stats.pairs} pairs written to {stats.directory}")
    return EXIT_OK


def cmd_train(config: Dict[str, object], args: argparse.Namespace) -> int:
    settings = train_config(config, args)
    dataset = read_dataset(args.dataset)
    result = train(settings, dataset, CheckpointStore(args.out))
    print(f"Training finished: {result.model.store.step} steps, checkpoints in {args.out}")
    return EXIT_OK


def _checkpoint_or_none(path: Path) -> Optional[Path]:
    try:
        return resolve_checkpoint(path)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None


def cmd_match(config: Dict[str, object], args: argparse.Namespace) -> int:
    checkpoint = _checkpoint_or_none(args.checkpoint)
    if checkpoint is None:
        return EXIT_MISSING_CHECKPOINT
    outcome = run_match(
        args.source,
        args.target,
        checkpoint,
        train_config(config, args),
        args.out,
        dump_graphs=args.dump_graphs,
        mode=args.mode,
        n_seeds=args.n_seeds,
    )
    for path in outcome.written:
        print(f"   -> {path}")
    return EXIT_OK


def cmd_eval(config: Dict[str, object], args: argparse.Namespace) -> int:
    checkpoint = _checkpoint_or_none(args.checkpoint)
    if checkpoint is None:
        return EXIT_MISSING_CHECKPOINT
    model, settings = load_model(checkpoint, train_config(config, args))
    if args.workers is not None:
        settings = settings.with_overrides(workers=args.workers)
    report = evaluate(model, read_dataset(args.dataset), settings)
    text = report.to_tsv()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(report.summary())
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Learned non-rigid shape matching on seed graphs")
    parser.add_argument("--config", type=Path, default=CONFIG_PATH, help="config.json or key=value file")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="write a synthetic dataset of deformed pairs")
    gen.add_argument("--out", type=Path, default=DATASET_DIR)
    gen.add_argument("--pairs", type=int)
    gen.add_argument("--base", choices=("cylinder", "sphere", "bar"))
    gen.add_argument("--resolution", type=int)
    gen.add_argument("--max-bend", dest="max_bend", type=float)
    gen.add_argument("--max-twist", dest="max_twist", type=float)
    gen.add_argument("--max-bump", dest="max_bump", type=float)
    gen.add_argument("--seed", type=int)
    gen.set_defaults(handler=cmd_gen)

    train_parser = commands.add_parser("train", help="train on a dataset directory")
    train_parser.add_argument("--dataset", type=Path, default=DATASET_DIR)
    train_parser.add_argument("--out", type=Path, default=RUNS_DIR / "latest")
    train_parser.add_argument("--epochs", type=int)
    train_parser.add_argument("--seed", type=int)
    train_parser.add_argument("--n-seeds", dest="n_seeds", type=int)
    train_parser.set_defaults(handler=cmd_train)

    match = commands.add_parser("match", help="match two meshes with a checkpoint")
    match.add_argument("source", type=Path)
    match.add_argument("target", type=Path)
    match.add_argument("--checkpoint", type=Path, required=True)
    match.add_argument("--out", type=Path, default=Path("matches.txt"))
    match.add_argument("--mode", choices=("row_argmax", "mutual"))
    match.add_argument("--dump-graphs", dest="dump_graphs", action="store_true")
    match.add_argument("--n-seeds", dest="n_seeds", type=int)
    match.set_defaults(handler=cmd_match)

    eval_parser = commands.add_parser("eval", help="coarse geodesic error and bijectivity on a dataset")
    eval_parser.add_argument("--dataset", type=Path, default=DATASET_DIR)
    eval_parser.add_argument("--checkpoint", type=Path, required=True)
    eval_parser.add_argument("--out", type=Path)
    eval_parser.add_argument("--workers", type=int)
    eval_parser.set_defaults(handler=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    configure_logging(config)
    try:
        return args.handler(config, args)
    except (FileNotFoundError, ValueError, RuntimeError, ValidationError) as exc:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
