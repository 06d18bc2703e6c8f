"""Ablation grids: loss-term combinations, label sources, orientation modes.

Each cell trains from scratch per seed and evaluates on the held-out
records; results carry per-seed accuracies plus mean and standard
deviation per split. A failing cell is recorded and the remaining cells
still run.
"""

from __future__ import annotations

import csv
import math
import traceback
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import ConfigError
from .evaluation import EvalConfig, Metrics, SPLIT_NAMES, evaluate
from .model import ModelConfig
from .objectives import LossWeights
from .perception import NoiseModel
from .training import TrainConfig, train

LOSS_GRID = (
    ("ref",),
    ("ref", "clf"),
    ("ref", "mask"),
    ("ref", "text"),
    ("ref", "clf", "mask"),
    ("ref", "clf", "text"),
    ("ref", "clf", "mask", "text"),
)

LABEL_GRID = (
    ("noisy", "noisy"),
    ("gt", "noisy"),
    ("noisy", "gt"),
    ("gt", "gt"),
)

ORIENTATION_GRID = (
    ("corrected", "none"),
    ("corrected", "corrected"),
    ("none", "corrected"),
    ("none", "none"),
)

GRID_NAMES = ("loss", "labels", "orientation")


@dataclass
class AblationCell:
    grid: str
    label: str
    train_cfg: TrainConfig
    eval_cfg: EvalConfig


@dataclass
class CellResult:
    cell: AblationCell
    per_seed: dict[int, Metrics] = field(default_factory=dict)
    error: Optional[str] = None

    def split_values(self, name: str) -> list[float]:
        return [m.accuracy(name) for m in self.per_seed.values()]

    def mean(self, name: str) -> float:
        values = self.split_values(name)
        return sum(values) / len(values) if values else float("nan")

    def std(self, name: str) -> float:
        values = self.split_values(name)
        if len(values) < 2:
            return 0.0
        mu = sum(values) / len(values)
        return math.sqrt(sum((v - mu) ** 2 for v in values) / (len(values) - 1))


def build_grid(
    grid: str, base_train: TrainConfig, base_eval: EvalConfig
) -> list[AblationCell]:
    if grid == "loss":
        cells = []
        for terms in LOSS_GRID:
            weights = LossWeights.from_terms(terms)
            cells.append(
                AblationCell(
                    grid="loss",
                    label="+".join(terms),
                    train_cfg=replace(base_train, loss_weights=weights),
                    eval_cfg=base_eval,
                )
            )
        return cells
    if grid == "labels":
        cells = []
        for train_src, eval_src in LABEL_GRID:
            noise = NoiseModel.noisy() if eval_src == "noisy" else NoiseModel.gt()
            cells.append(
                AblationCell(
                    grid="labels",
                    label=f"train={train_src}/eval={eval_src}",
                    train_cfg=replace(base_train, label_source=train_src),
                    eval_cfg=replace(base_eval, label_source=eval_src, noise=noise),
                )
            )
        return cells
    if grid == "orientation":
        cells = []
        for train_mode, eval_mode in ORIENTATION_GRID:
            cells.append(
                AblationCell(
                    grid="orientation",
                    label=f"train={train_mode}/eval={eval_mode}",
                    train_cfg=replace(base_train, orientation_mode=train_mode),
                    eval_cfg=replace(base_eval, orientation_mode=eval_mode),
                )
            )
        return cells
    raise ConfigError(f"unknown ablation grid {grid!r}; choose from {GRID_NAMES}")


def run_ablation(
    data,
    train_records,
    test_records,
    vocab,
    model_cfg: ModelConfig,
    base_train: TrainConfig,
    base_eval: EvalConfig,
    grid: str,
    seeds=(0, 1, 2),
) -> list[CellResult]:
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    results = []
    for cell in build_grid(grid, base_train, base_eval):
        result = CellResult(cell=cell)
        try:
            for seed in seeds:
                train_cfg = replace(cell.train_cfg, seed=seed)
                eval_cfg = replace(cell.eval_cfg, seed=seed)
                outcome = train(data, train_records, vocab, model_cfg, train_cfg)
                result.per_seed[seed] = evaluate(
                    outcome.model, data, test_records, eval_cfg, vocab
                )
        except Exception:
            # keep the grid going; the cell records its own failure
            result.error = traceback.format_exc(limit=4).strip()
        results.append(result)
    return results


def write_ablation_csv(results: list[CellResult], path: str) -> None:
    columns = ["grid", "cell", "seeds", "error"]
    for name in SPLIT_NAMES:
        columns.append(f"{name}_mean")
        columns.append(f"{name}_std")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for result in results:
            row = [
                result.cell.grid,
                result.cell.label,
                len(result.per_seed),
                result.error.splitlines()[-1] if result.error else "",
            ]
            for name in SPLIT_NAMES:
                if result.per_seed:
                    row.append(f"{result.mean(name):.4f}")
                    row.append(f"{result.std(name):.4f}")
                else:
                    row.extend(["", ""])
            writer.writerow(row)
