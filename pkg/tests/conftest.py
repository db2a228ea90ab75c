from __future__ import annotations

import random

import pytest

from promptcal.dataset import Record
from promptcal.gateway import BackendConfig, Gateway, MockScript
from promptcal.labels import ClassLabel, ClassSchema, Rank, RankSchema


@pytest.fixture
def yes_no():
    return ClassSchema(("Yes", "No"))


@pytest.fixture
def rank_schema():
    return RankSchema()


def mock_gateway(entries, strict=True, default_response="", **kwargs) -> Gateway:
    script = MockScript(entries, strict=strict, default_response=default_response)
    config = BackendConfig(kind="mock", mock_script=script)
    return Gateway(config, **kwargs)


def make_record(record_id, text, annotation=None, prediction=None, source="real") -> Record:
    return Record(
        id=record_id, text=text, annotation=annotation, prediction=prediction, source=source
    )


def labeled_records(schema, pairs) -> list[Record]:
    """pairs: list of (annotation, prediction) label names or rank ints."""

    def as_label(value):
        if value is None:
            return None
        if isinstance(value, int):
            return Rank(value)
        return ClassLabel(value)

    return [
        make_record(i, f"sample text {i}", as_label(a), as_label(p))
        for i, (a, p) in enumerate(pairs)
    ]


def random_words(rng: random.Random, n: int) -> str:
    vocab = [
        "plot", "twist", "acting", "scene", "camera", "story", "ending", "score",
        "villain", "hero", "dialogue", "pacing", "drama", "comedy", "thriller",
        "sequel", "footage", "editing", "lighting", "soundtrack",
    ]
    return " ".join(rng.choice(vocab) for _ in range(n))
