"""Command-line entry points.

Commands read a JSON config file; --set key.path=value overrides
individual fields (values parse as JSON, falling back to strings). Exit
codes: 0 success, 2 bad config or incompatible artifacts, 3 missing
input artifact, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import torch

from . import artifacts
from .ablation import GRID_NAMES, run_ablation, write_ablation_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .encoding import build_vocab
from .errors import ConfigError, MissingArtifactError, RoomRefError
from .evaluation import EvalConfig, SPLIT_NAMES, evaluate
from .model import ModelConfig
from .objectives import LossWeights, MaskingPolicy
from .oracle import resolve_reference
from .perception import NoiseModel, simulate_predictions
from .scenes import GenConfig, validate_scene
from .seeding import derive_seed
from .training import TrainConfig, grad_check, grad_check_setup, train
from .utterances import generate_corpus, template_lexicon

CHECKPOINT_FILE = "checkpoint.rrck"
TRAIN_LOG_FILE = "train-log.jsonl"
METRICS_FILE = "metrics.json"
ABLATION_FILE = "ablation.csv"


def _parse_set_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    config = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        key_path, raw = item.split("=", 1)
        keys = key_path.split(".")
        node = config
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = _parse_set_value(raw)
    return config


def load_config(path: str, overrides: list[str]) -> dict:
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing config file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return apply_overrides(config, overrides)


def _section(config: dict, name: str) -> dict:
    value = config.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return value


def _take(section: dict, allowed: set, context: str) -> dict:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} fields: {sorted(unknown)}")
    return section


def gen_config_from(config: dict) -> GenConfig:
    section = _take(
        _section(config, "gen"),
        {
            "n_scenes",
            "utterances_per_scene",
            "seed",
            "room_extent",
            "min_objects",
            "max_objects",
            "max_retries",
            "tie_tolerance",
            "vd_fraction",
            "explicit_fraction",
            "noise",
            "catalog",
            "landmark_classes",
        },
        "gen",
    )
    kwargs = {}
    for name in (
        "min_objects",
        "max_objects",
        "max_retries",
        "tie_tolerance",
        "vd_fraction",
        "explicit_fraction",
    ):
        if name in section:
            kwargs[name] = section[name]
    if "room_extent" in section:
        kwargs["room_extent"] = tuple(section["room_extent"])
    if "catalog" in section:
        kwargs["catalog"] = tuple(section["catalog"])
    if "landmark_classes" in section:
        kwargs["landmark_classes"] = tuple(section["landmark_classes"])
    cfg = GenConfig(**kwargs)
    cfg.validate()
    return cfg


def noise_from(section: dict) -> NoiseModel:
    payload = section.get("noise", {})
    if not isinstance(payload, dict):
        raise ConfigError("noise must be an object")
    _take(payload, {"mode", "top1_accuracy", "temperature"}, "noise")
    mode = payload.get("mode", "noisy")
    default_p = 1.0 if mode == "gt" else NoiseModel().top1_accuracy
    noise = NoiseModel(
        top1_accuracy=payload.get("top1_accuracy", default_p),
        temperature=payload.get("temperature", 1.0),
        mode=mode,
    )
    noise.validate()
    return noise


def model_config_from(config: dict, vocab_size: int, n_classes: int) -> ModelConfig:
    section = _take(
        _section(config, "model"),
        {
            "d_model",
            "n_layers",
            "n_heads",
            "ff_dim",
            "dropout",
            "max_len",
            "use_sequence_positions",
        },
        "model",
    )
    cfg = ModelConfig(vocab_size=vocab_size, n_classes=n_classes, **section)
    cfg.validate()
    return cfg


def train_config_from(config: dict) -> TrainConfig:
    section = dict(
        _take(
            _section(config, "train"),
            {
                "total_steps",
                "batch_size",
                "learning_rate",
                "warmup_steps",
                "betas",
                "eps",
                "weight_decay",
                "seed",
                "label_source",
                "orientation_mode",
                "loss_terms",
                "loss_weights",
                "masking",
                "checkpoint_interval",
            },
            "train",
        )
    )
    terms = section.pop("loss_terms", None)
    weight_values = section.pop("loss_weights", {})
    if terms is not None:
        section["loss_weights"] = LossWeights.from_terms(terms, **weight_values)
    elif weight_values:
        section["loss_weights"] = LossWeights(**weight_values)
    if "masking" in section:
        section["masking"] = MaskingPolicy(**section["masking"])
    if "betas" in section:
        section["betas"] = tuple(section["betas"])
    cfg = TrainConfig(**section)
    cfg.validate()
    return cfg


def eval_config_from(config: dict) -> EvalConfig:
    section = dict(
        _take(
            _section(config, "eval"),
            {"label_source", "noise", "top_k", "orientation_mode", "seed"},
            "eval",
        )
    )
    if "noise" in section or section.get("label_source") == "noisy":
        section["noise"] = noise_from(section) if "noise" in section else NoiseModel.noisy()
    cfg = EvalConfig(**section)
    cfg.validate()
    return cfg


def _paths(config: dict) -> tuple[str, str]:
    section = _take(_section(config, "paths"), {"data_dir", "run_dir"}, "paths")
    data_dir = section.get("data_dir", "data")
    run_dir = section.get("run_dir", "runs/default")
    return data_dir, run_dir


def _holdout(config: dict) -> float:
    return float(config.get("split", {}).get("holdout_fraction", 0.2))


def _pick_split(data, config: dict, which: str):
    train_records, test_records = data.split_records(_holdout(config))
    if which == "train":
        return train_records
    if which == "test":
        return test_records
    if which == "all":
        return data.records
    raise ConfigError(f"--split must be train, test, or all, got {which!r}")


def cmd_gen_data(args) -> int:
    config = load_config(args.config, args.set or [])
    fingerprint = artifacts.config_fingerprint(config)
    gen_cfg = gen_config_from(config)
    section = _section(config, "gen")
    n_scenes = int(section.get("n_scenes", 50))
    per_scene = int(section.get("utterances_per_scene", 10))
    seed = int(section.get("seed", 0))
    if n_scenes <= 0 or per_scene <= 0:
        raise ConfigError("n_scenes and utterances_per_scene must be positive")
    noise = noise_from(section)

    data_dir, _ = _paths(config)
    os.makedirs(data_dir, exist_ok=True)
    scenes, records = generate_corpus(gen_cfg, n_scenes, per_scene, seed)
    vocab = build_vocab(gen_cfg.catalog, template_lexicon())

    artifacts.save_scenes(
        os.path.join(data_dir, artifacts.SCENES_FILE), scenes, fingerprint, gen_cfg.catalog
    )
    artifacts.save_records(
        os.path.join(data_dir, artifacts.UTTERANCES_FILE), records, fingerprint
    )
    artifacts.save_vocab(os.path.join(data_dir, artifacts.VOCAB_FILE), vocab, fingerprint)
    if noise.mode == "noisy":
        predictions = simulate_predictions(
            scenes, noise, gen_cfg.catalog, derive_seed(seed, "perception")
        )
        artifacts.save_predictions(
            os.path.join(data_dir, artifacts.PREDICTIONS_FILE), predictions, fingerprint
        )
    print(
        f"wrote {len(scenes)} scenes, {len(records)} utterances, "
        f"vocab size {vocab.size} to {data_dir}"
    )
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, args.set or [])
    fingerprint = artifacts.config_fingerprint(config)
    data_dir, run_dir = _paths(config)
    data = artifacts.load_corpus(data_dir)
    vocab = artifacts.load_vocab(os.path.join(data_dir, artifacts.VOCAB_FILE))
    model_cfg = model_config_from(config, vocab.size, len(data.catalog))
    train_cfg = train_config_from(config)
    train_records, _ = data.split_records(_holdout(config))

    os.makedirs(run_dir, exist_ok=True)
    result = train(data, train_records, vocab, model_cfg, train_cfg)
    save_checkpoint(
        os.path.join(run_dir, CHECKPOINT_FILE),
        result.model,
        vocab.fingerprint(),
        data.catalog,
        train_cfg.total_steps,
    )
    artifacts.write_jsonl(
        os.path.join(run_dir, TRAIN_LOG_FILE), "train-log", fingerprint, result.log
    )
    final = result.log[-1]
    print(
        f"trained {train_cfg.total_steps} steps on {len(train_records)} records; "
        f"final total loss {final['total']:.4f} -> {run_dir}"
    )
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config, args.set or [])
    data_dir, run_dir = _paths(config)
    data = artifacts.load_corpus(data_dir)
    vocab = artifacts.load_vocab(os.path.join(data_dir, artifacts.VOCAB_FILE))
    checkpoint_path = args.checkpoint or os.path.join(run_dir, CHECKPOINT_FILE)
    model, header = load_checkpoint(checkpoint_path)
    if header["vocab_fingerprint"] != vocab.fingerprint():
        raise ConfigError(
            "checkpoint was trained against a different vocabulary; refusing to evaluate"
        )
    if tuple(header["catalog"]) != tuple(data.catalog):
        raise ConfigError(
            "checkpoint class catalog does not match the data catalog; refusing to evaluate"
        )
    eval_cfg = eval_config_from(config)
    records = _pick_split(data, config, args.split)
    if not records:
        raise ConfigError(f"split {args.split!r} selected zero records")
    metrics = evaluate(model, data, records, eval_cfg, vocab)

    payload = {
        "config": {
            "eval": eval_cfg.to_dict(),
            "split": args.split,
            "checkpoint": os.path.basename(checkpoint_path),
            "config_fingerprint": artifacts.config_fingerprint(config),
        },
        "metrics": metrics.to_dict(),
    }
    os.makedirs(run_dir, exist_ok=True)
    artifacts.save_metrics(os.path.join(run_dir, METRICS_FILE), payload)
    for name in SPLIT_NAMES:
        stat = metrics.splits[name]
        print(f"{name:12s} acc {stat.accuracy:.4f} (n={stat.count})")
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config, args.set or [])
    data_dir, run_dir = _paths(config)
    data = artifacts.load_corpus(data_dir)
    vocab = artifacts.load_vocab(os.path.join(data_dir, artifacts.VOCAB_FILE))
    model_cfg = model_config_from(config, vocab.size, len(data.catalog))
    base_train = train_config_from(config)
    base_eval = eval_config_from(config)
    section = _take(_section(config, "ablate"), {"seeds", "grid"}, "ablate")
    seeds = tuple(section.get("seeds", (0, 1, 2)))
    grid = args.grid or section.get("grid")
    if grid not in GRID_NAMES:
        raise ConfigError(f"--grid must be one of {GRID_NAMES}, got {grid!r}")
    train_records, test_records = data.split_records(_holdout(config))

    results = run_ablation(
        data, train_records, test_records, vocab, model_cfg,
        base_train, base_eval, grid, seeds,
    )
    os.makedirs(run_dir, exist_ok=True)
    out_path = os.path.join(run_dir, ABLATION_FILE)
    write_ablation_csv(results, out_path)
    for result in results:
        if result.error:
            print(f"{result.cell.label:30s} FAILED: {result.error.splitlines()[-1]}")
        else:
            print(
                f"{result.cell.label:30s} overall {result.mean('overall'):.4f} "
                f"+/- {result.std('overall'):.4f}"
            )
    print(f"wrote {out_path}")
    return 0


def cmd_oracle_check(args) -> int:
    config = load_config(args.config, args.set or [])
    data_dir, _ = _paths(config)
    data = artifacts.load_corpus(data_dir)
    gen_cfg = gen_config_from(config)
    mismatches = 0
    for scene in data.scenes.values():
        validate_scene(scene)
    for record in data.records:
        scene = data.scenes[record.scene_id]
        orientation = record.speaker_orientation if record.view_dependent else 0
        resolved = resolve_reference(
            scene, record.relation, orientation, gen_cfg.tie_tolerance
        )
        if resolved != record.target_id:
            mismatches += 1
    total = len(data.records)
    rate = (total - mismatches) / total if total else 1.0
    print(f"oracle agreement {rate:.4f} over {total} records ({mismatches} mismatches)")
    if mismatches:
        raise RoomRefError("stored targets disagree with the geometric oracle")
    return 0


def cmd_grad_check(args) -> int:
    dtype = {"float32": torch.float32, "float64": torch.float64}[args.dtype]
    epsilon = args.epsilon if args.epsilon is not None else (
        1e-3 if dtype == torch.float32 else 1e-5
    )
    threshold = 1e-3 if dtype == torch.float32 else 1e-6
    model, batch, targets, weights = grad_check_setup(dtype=dtype, seed=args.seed)
    worst = grad_check(model, batch, targets, weights, epsilon=epsilon, seed=args.seed)
    print(f"max relative gradient error {worst:.3e} ({args.dtype}, eps {epsilon:g})")
    if worst > threshold:
        raise RoomRefError(
            f"gradient check failed: {worst:.3e} exceeds {threshold:g} for {args.dtype}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roomref",
        description="Synthetic room-reference grounding: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY.PATH=VALUE",
            help="override a config field (value parsed as JSON)",
        )

    p = sub.add_parser("gen-data", help="generate scenes, utterances, labels, vocab")
    with_config(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on the generated corpus")
    with_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    with_config(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: run_dir/checkpoint.rrck)")
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    with_config(p)
    p.add_argument("--grid", choices=GRID_NAMES, help="which grid to run")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("oracle-check", help="recompute targets for a stored corpus")
    with_config(p)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--dtype", default="float64", choices=("float32", "float64"))
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RoomRefError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
