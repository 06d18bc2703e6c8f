"""Artifact formats and corpus I/O.

Every JSONL artifact starts with a header line carrying kind,
format_version, and the fingerprint of the config that produced it;
records follow one per line. Serialization is canonical (sorted keys,
compact separators), so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .encoding import Vocab
from .errors import DataError, MissingArtifactError
from .perception import RankedLabels
from .scenes import Scene, scene_from_dict, scene_to_dict
from .utterances import UtteranceRecord, record_from_dict, record_to_dict

FORMAT_VERSION = 1

SCENES_FILE = "scenes.jsonl"
UTTERANCES_FILE = "utterances.jsonl"
PREDICTIONS_FILE = "predictions.jsonl"
VOCAB_FILE = "vocab.json"


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_fingerprint(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def write_jsonl(
    path: str, kind: str, fingerprint: str, rows: list[dict], extra_header: Optional[dict] = None
) -> None:
    header = {
        "kind": kind,
        "format_version": FORMAT_VERSION,
        "config_fingerprint": fingerprint,
    }
    if extra_header:
        header.update(extra_header)
    lines = [canonical_json(header)]
    lines.extend(canonical_json(row) for row in rows)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_jsonl(path: str, kind: str) -> tuple[dict, list[dict]]:
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise DataError(f"{path}: empty artifact")
    header = json.loads(lines[0])
    if header.get("kind") != kind:
        raise DataError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported format_version {header.get('format_version')!r}"
        )
    return header, [json.loads(line) for line in lines[1:]]


def save_scenes(path: str, scenes: list[Scene], fingerprint: str, catalog=()) -> None:
    write_jsonl(
        path,
        "scenes",
        fingerprint,
        [scene_to_dict(s) for s in scenes],
        extra_header={"catalog": list(catalog)} if catalog else None,
    )


def load_scenes(path: str) -> tuple[dict, list[Scene]]:
    header, rows = read_jsonl(path, "scenes")
    return header, [scene_from_dict(row) for row in rows]


def save_records(path: str, records: list[UtteranceRecord], fingerprint: str) -> None:
    write_jsonl(path, "utterances", fingerprint, [record_to_dict(r) for r in records])


def load_records(path: str) -> tuple[dict, list[UtteranceRecord]]:
    header, rows = read_jsonl(path, "utterances")
    return header, [record_from_dict(row) for row in rows]


def save_predictions(
    path: str, predictions: dict[str, dict[int, RankedLabels]], fingerprint: str
) -> None:
    rows = []
    for scene_id in sorted(predictions):
        per_scene = predictions[scene_id]
        rows.append(
            {
                "scene_id": scene_id,
                "objects": {
                    str(oid): [[label, score] for label, score in per_scene[oid].entries]
                    for oid in sorted(per_scene)
                },
            }
        )
    write_jsonl(path, "predictions", fingerprint, rows)


def load_predictions(path: str) -> tuple[dict, dict[str, dict[int, RankedLabels]]]:
    header, rows = read_jsonl(path, "predictions")
    predictions: dict[str, dict[int, RankedLabels]] = {}
    for row in rows:
        predictions[row["scene_id"]] = {
            int(oid): RankedLabels(
                entries=tuple((label, float(score)) for label, score in entries)
            )
            for oid, entries in row["objects"].items()
        }
    return header, predictions


def save_vocab(path: str, vocab: Vocab, fingerprint: str) -> None:
    payload = vocab.to_dict()
    payload["config_fingerprint"] = fingerprint
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_vocab(path: str) -> Vocab:
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return Vocab.from_dict(payload)


def save_metrics(path: str, metrics_dict: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(metrics_dict, sort_keys=True, indent=2) + "\n")


@dataclass
class GroundingData:
    """In-memory corpus: scenes by id, records, class catalog, and the
    classifier output when the corpus was generated with noise."""

    scenes: dict[str, Scene]
    records: list[UtteranceRecord]
    catalog: tuple[str, ...]
    scene_order: list[str] = field(default_factory=list)
    predictions: Optional[dict[str, dict[int, RankedLabels]]] = None

    def __post_init__(self):
        if not self.scene_order:
            self.scene_order = list(self.scenes.keys())
        for record in self.records:
            if record.scene_id not in self.scenes:
                raise DataError(f"record references unknown scene {record.scene_id}")

    def split_records(self, holdout_fraction: float = 0.2):
        """Scene-level split: first scenes train, last scenes held out."""
        if not 0.0 < holdout_fraction < 1.0:
            raise DataError("holdout_fraction must be in (0, 1)")
        n_test = max(1, round(holdout_fraction * len(self.scene_order)))
        if n_test >= len(self.scene_order):
            raise DataError("holdout would consume every scene")
        test_scenes = set(self.scene_order[-n_test:])
        train = [r for r in self.records if r.scene_id not in test_scenes]
        test = [r for r in self.records if r.scene_id in test_scenes]
        return train, test


def load_corpus(data_dir: str) -> GroundingData:
    scenes_header, scenes = load_scenes(os.path.join(data_dir, SCENES_FILE))
    _, records = load_records(os.path.join(data_dir, UTTERANCES_FILE))
    catalog = tuple(scenes_header.get("catalog", ()))
    if not catalog:
        raise DataError("scenes artifact lacks the class catalog")
    predictions = None
    pred_path = os.path.join(data_dir, PREDICTIONS_FILE)
    if os.path.exists(pred_path):
        _, predictions = load_predictions(pred_path)
    return GroundingData(
        scenes={s.scene_id: s for s in scenes},
        records=records,
        catalog=catalog,
        scene_order=[s.scene_id for s in scenes],
        predictions=predictions,
    )
