"""Benchmark sample store.

Holds the growing benchmark: insertion with semantic deduplication, row-wise
function application, semantic sampling over real data, class statistics, and
JSON-lines persistence with a CSV export for human inspection.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import CorruptDataset, InvalidQuery, InvalidRecord
from .gateway import EmbeddingVector, embed_text_fallback
from .labels import Label, LabelSchema, label_from_json, label_to_json

SOURCES = ("user_seed", "real", "synthetic", "generated_output")
SAMPLING_SOURCES = ("user_seed", "real")

Embedder = Callable[[list[str]], list[EmbeddingVector]]


@dataclass
class Record:
    id: int
    text: str
    annotation: Label | None = None
    prediction: Label | None = None
    source: str = "real"
    iteration_created: int = 0
    embedding: EmbeddingVector | None = None
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class DedupPolicy:
    cosine_threshold: float = 0.95
    exact_match_first: bool = True

    def __post_init__(self) -> None:
        if not (0.0 <= self.cosine_threshold <= 1.0):
            raise ValueError("cosine_threshold must be in [0, 1]")


@dataclass(frozen=True)
class InsertResult:
    accepted_ids: tuple[int, ...]
    rejected_count: int


@dataclass(frozen=True)
class DatasetStats:
    per_label_counts: dict
    balance_ratio: float
    total: int


def _record_to_json(record: Record) -> dict:
    return {
        "id": record.id,
        "text": record.text,
        "annotation": label_to_json(record.annotation),
        "prediction": label_to_json(record.prediction),
        "source": record.source,
        "iteration_created": record.iteration_created,
        "embedding": list(record.embedding.values) if record.embedding else None,
        "metadata": record.metadata,
    }


class Dataset:
    """Single-writer in-process store keyed by sequential integer ids."""

    def __init__(self, schema: LabelSchema, embedder: Embedder | None = None):
        self.schema = schema
        self._embedder: Embedder = embedder or (lambda texts: [embed_text_fallback(t) for t in texts])
        self._records: dict[int, Record] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records())

    def records(self) -> list[Record]:
        return [self._records[i] for i in sorted(self._records)]

    def get(self, record_id: int) -> Record:
        return self._records[record_id]

    # -- insertion with semantic dedup -----------------------------------------

    def insert_records(
        self,
        batch: Iterable[dict],
        policy: DedupPolicy | None = None,
        iteration: int = 0,
    ) -> InsertResult:
        """Insert a batch, rejecting exact and near duplicates.

        A candidate competes against all kept records: everything already in
        the dataset plus the candidates accepted earlier in this batch.
        """
        policy = policy or DedupPolicy()
        kept_texts = {r.text for r in self._records.values()}
        kept_vectors = [r.embedding.array() for r in self._records.values() if r.embedding]
        accepted_ids: list[int] = []
        rejected = 0
        staged: list[Record] = []

        for item in batch:
            text = item["text"]
            if not text or not text.strip():
                raise InvalidRecord("record text must be non-empty")
            source = item.get("source", "synthetic")
            if source not in SOURCES:
                raise InvalidRecord(f"unknown source {source!r}")
            if policy.exact_match_first and text in kept_texts:
                rejected += 1
                continue
            vector = self._embedder([text])[0]
            arr = vector.array()
            if kept_vectors and float(np.max(np.stack(kept_vectors) @ arr)) >= policy.cosine_threshold:
                rejected += 1
                continue
            annotation = item.get("annotation")
            if annotation is not None and not self.schema.contains(annotation):
                raise InvalidRecord(f"annotation {annotation} not in schema")
            record = Record(
                id=self._next_id,
                text=text,
                annotation=annotation,
                source=source,
                iteration_created=iteration,
                embedding=vector,
                metadata=dict(item.get("metadata", {})),
            )
            self._next_id += 1
            staged.append(record)
            kept_texts.add(text)
            kept_vectors.append(arr)
            accepted_ids.append(record.id)

        for record in staged:
            self._records[record.id] = record
        return InsertResult(tuple(accepted_ids), rejected)

    # -- row-wise application ----------------------------------------------------

    def apply(self, fn: Callable[[Record], Record], selector: Callable[[Record], bool] | None = None) -> int:
        """Apply fn to selected rows in id order, all-or-nothing."""
        selected = [r for r in self.records() if selector is None or selector(r)]
        updated: list[Record] = []
        for record in selected:
            result = fn(copy.deepcopy(record))
            if result.id != record.id:
                raise InvalidRecord(f"apply must not change record id {record.id}")
            updated.append(result)
        for record in updated:
            self._records[record.id] = record
        return len(updated)

    def set_labels(self, labels: dict[int, Label], field_name: str) -> int:
        """Write annotation or prediction labels through one code path."""
        if field_name not in ("annotation", "prediction"):
            raise ValueError(f"unknown label field {field_name!r}")

        def write(record: Record) -> Record:
            setattr(record, field_name, labels[record.id])
            return record

        return self.apply(write, selector=lambda r: r.id in labels)

    # -- semantic sampling ---------------------------------------------------------

    def sampling_pool(self) -> list[Record]:
        return [r for r in self.records() if r.source in SAMPLING_SOURCES]

    def semantic_sample(self, query_texts: list[str], k: int) -> list[Record]:
        """Up to k real/user-seed records closest to the query centroid.

        Ties break toward the lower id; an empty pool yields an empty list so
        zero-shot runs can simply omit the style section.
        """
        if not query_texts:
            raise InvalidQuery("semantic_sample needs at least one query text")
        if k < 1:
            raise InvalidQuery("k must be positive")
        pool = self.sampling_pool()
        if not pool:
            return []
        queries = np.stack([v.array() for v in self._embedder(query_texts)])
        centroid = queries.mean(axis=0)
        norm = np.linalg.norm(centroid)
        if norm > 0:
            centroid = centroid / norm
        scored = []
        for record in pool:
            vector = record.embedding or self._embedder([record.text])[0]
            scored.append((-float(np.dot(vector.array(), centroid)), record.id, record))
        scored.sort(key=lambda item: (item[0], item[1]))
        return [record for _, _, record in scored[:k]]

    # -- statistics ------------------------------------------------------------------

    def stats(self, over: str = "annotations") -> DatasetStats:
        if over not in ("annotations", "predictions"):
            raise ValueError("over must be 'annotations' or 'predictions'")
        field_name = "annotation" if over == "annotations" else "prediction"
        counts = {label: 0 for label in self.schema.ordered()}
        total = 0
        for record in self._records.values():
            label = getattr(record, field_name)
            if label is None:
                continue
            counts[label] = counts.get(label, 0) + 1
            total += 1
        values = list(counts.values())
        if total == 0 or max(values) == 0:
            ratio = 1.0
        else:
            ratio = min(values) / max(values)
        return DatasetStats(per_label_counts=counts, balance_ratio=ratio, total=total)

    # -- persistence ---------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records():
                fh.write(json.dumps(_record_to_json(record), ensure_ascii=False))
                fh.write("\n")

    @classmethod
    def load(cls, path: str | Path, schema: LabelSchema, embedder: Embedder | None = None) -> "Dataset":
        dataset = cls(schema, embedder=embedder)
        with open(path, encoding="utf-8") as fh:
            for line_number, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                    record = Record(
                        id=int(data["id"]),
                        text=data["text"],
                        annotation=label_from_json(data.get("annotation"), schema),
                        prediction=label_from_json(data.get("prediction"), schema),
                        source=data["source"],
                        iteration_created=int(data["iteration_created"]),
                        embedding=(
                            EmbeddingVector(tuple(data["embedding"]), len(data["embedding"]))
                            if data.get("embedding")
                            else None
                        ),
                        metadata=dict(data.get("metadata", {})),
                    )
                    if record.source not in SOURCES:
                        raise ValueError(f"unknown source {record.source!r}")
                except (ValueError, KeyError, TypeError) as exc:
                    raise CorruptDataset(line_number, str(exc)) from exc
                if record.id in dataset._records:
                    raise CorruptDataset(line_number, f"duplicate id {record.id}")
                dataset._records[record.id] = record
        if dataset._records:
            dataset._next_id = max(dataset._records) + 1
        return dataset

    def export_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["text", "annotation", "prediction", "source"])
            for record in self.records():
                writer.writerow(
                    [
                        record.text,
                        label_to_json(record.annotation),
                        label_to_json(record.prediction),
                        record.source,
                    ]
                )
