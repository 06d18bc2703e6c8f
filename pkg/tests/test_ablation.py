"""Ablation grid construction, error isolation, and the CSV table."""

import csv
import dataclasses

import pytest
import torch

from roomref.ablation import (
    GRID_NAMES,
    LABEL_GRID,
    LOSS_GRID,
    ORIENTATION_GRID,
    build_grid,
    run_ablation,
    write_ablation_csv,
)
from roomref.errors import ConfigError
from roomref.evaluation import EvalConfig, SPLIT_NAMES
from roomref.model import ModelConfig
from roomref.objectives import LossWeights
from roomref.training import TrainConfig

torch.set_num_threads(1)


BASE_TRAIN = TrainConfig(total_steps=6, batch_size=8, learning_rate=1e-3, seed=0)
BASE_EVAL = EvalConfig(label_source="gt", seed=0)


def test_loss_grid_rows():
    assert LOSS_GRID == (
        ("ref",),
        ("ref", "clf"),
        ("ref", "mask"),
        ("ref", "text"),
        ("ref", "clf", "mask"),
        ("ref", "clf", "text"),
        ("ref", "clf", "mask", "text"),
    )
    assert all("ref" in terms for terms in LOSS_GRID)
    assert len(LOSS_GRID) == 7


def test_label_grid_covers_all_pairs():
    assert set(LABEL_GRID) == {(t, e) for t in ("gt", "noisy") for e in ("gt", "noisy")}
    assert len(LABEL_GRID) == 4


def test_orientation_grid_covers_all_pairs():
    assert set(ORIENTATION_GRID) == {
        (t, e) for t in ("corrected", "none") for e in ("corrected", "none")
    }
    assert len(ORIENTATION_GRID) == 4


def test_loss_cells_toggle_terms():
    cells = build_grid("loss", BASE_TRAIN, BASE_EVAL)
    assert [c.label for c in cells] == [
        "ref",
        "ref+clf",
        "ref+mask",
        "ref+text",
        "ref+clf+mask",
        "ref+clf+text",
        "ref+clf+mask+text",
    ]
    assert cells[0].train_cfg.loss_weights.enabled_terms() == ("ref",)
    assert cells[-1].train_cfg.loss_weights.enabled_terms() == (
        "ref",
        "clf",
        "text",
        "mask",
    )
    # eval setup is held fixed across loss cells
    assert all(c.eval_cfg == BASE_EVAL for c in cells)


def test_label_cells_wire_sources():
    cells = build_grid("labels", BASE_TRAIN, BASE_EVAL)
    for cell, (train_src, eval_src) in zip(cells, LABEL_GRID):
        assert cell.train_cfg.label_source == train_src
        assert cell.eval_cfg.label_source == eval_src
        assert cell.eval_cfg.noise.mode == ("noisy" if eval_src == "noisy" else "gt")


def test_orientation_cells_wire_modes():
    cells = build_grid("orientation", BASE_TRAIN, BASE_EVAL)
    for cell, (train_mode, eval_mode) in zip(cells, ORIENTATION_GRID):
        assert cell.train_cfg.orientation_mode == train_mode
        assert cell.eval_cfg.orientation_mode == eval_mode


def test_unknown_grid_rejected():
    with pytest.raises(ConfigError):
        build_grid("widths", BASE_TRAIN, BASE_EVAL)
    assert GRID_NAMES == ("loss", "labels", "orientation")


@pytest.fixture(scope="module")
def ablation_run(small_corpus, vocab):
    model_cfg = ModelConfig(
        vocab_size=vocab.size,
        n_classes=len(small_corpus.catalog),
        d_model=24,
        n_layers=1,
        n_heads=2,
        ff_dim=48,
    )
    train_records, test_records = small_corpus.split_records(0.2)
    results = run_ablation(
        small_corpus, train_records, test_records, vocab, model_cfg,
        BASE_TRAIN, BASE_EVAL, "labels", seeds=(0, 1),
    )
    return results


def test_cells_report_per_seed_metrics(ablation_run):
    assert len(ablation_run) == 4
    for result in ablation_run:
        assert result.error is None
        assert set(result.per_seed) == {0, 1}
        assert 0.0 <= result.mean("overall") <= 1.0
        assert result.std("overall") >= 0.0


def test_mismatched_seeds_change_training(ablation_run):
    # different seeds within a cell rarely produce the exact same accuracy
    spread = [result.std("overall") for result in ablation_run]
    assert any(s > 0.0 for s in spread)


def test_failing_cell_does_not_abort_grid(small_corpus, vocab):
    model_cfg = ModelConfig(
        vocab_size=vocab.size,
        n_classes=len(small_corpus.catalog),
        d_model=24,
        n_layers=1,
        n_heads=2,
        ff_dim=48,
    )
    train_records, test_records = small_corpus.split_records(0.2)
    # strip stored classifier output so noisy-label cells cannot train
    broken = dataclasses.replace(small_corpus, predictions=None)
    results = run_ablation(
        broken, train_records, test_records, vocab, model_cfg,
        BASE_TRAIN, BASE_EVAL, "labels", seeds=(0,),
    )
    by_label = {r.cell.label: r for r in results}
    assert by_label["train=noisy/eval=noisy"].error is not None
    assert by_label["train=gt/eval=gt"].error is None
    assert len(results) == 4


def test_empty_seed_list_rejected(small_corpus, vocab):
    model_cfg = ModelConfig(
        vocab_size=vocab.size, n_classes=len(small_corpus.catalog),
        d_model=24, n_layers=1, n_heads=2, ff_dim=48,
    )
    train_records, test_records = small_corpus.split_records(0.2)
    with pytest.raises(ConfigError):
        run_ablation(
            small_corpus, train_records, test_records, vocab, model_cfg,
            BASE_TRAIN, BASE_EVAL, "labels", seeds=(),
        )


def test_csv_table_shape(ablation_run, tmp_path):
    path = str(tmp_path / "ablation.csv")
    write_ablation_csv(ablation_run, path)
    rows = list(csv.reader(open(path)))
    header, body = rows[0], rows[1:]
    assert header[:4] == ["grid", "cell", "seeds", "error"]
    for name in SPLIT_NAMES:
        assert f"{name}_mean" in header
        assert f"{name}_std" in header
    assert len(header) == 4 + 2 * len(SPLIT_NAMES)
    assert len(body) == 4
    for row in body:
        assert row[0] == "labels"
        assert row[2] == "2"
        assert row[3] == ""
        overall = float(row[header.index("overall_mean")])
        assert 0.0 <= overall <= 1.0
