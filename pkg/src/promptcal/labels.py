"""Labels and label schemas.

Two label families exist: class labels drawn from a declared set, and ranks
on the 1-5 scale. A schema declares the valid labels for a task and owns
parsing/normalization of model answers into labels.
"""

from __future__ import annotations

from dataclasses import dataclass

RANK_MIN = 1
RANK_MAX = 5


@dataclass(frozen=True)
class ClassLabel:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Rank:
    value: int

    def __post_init__(self) -> None:
        if not (RANK_MIN <= self.value <= RANK_MAX):
            raise ValueError(f"rank must be in [{RANK_MIN}, {RANK_MAX}], got {self.value}")

    def __str__(self) -> str:
        return str(self.value)


Label = ClassLabel | Rank


@dataclass(frozen=True)
class ClassSchema:
    """An ordered set of class labels; declaration order breaks ties."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("class schema needs at least one label")
        if len(set(l.lower() for l in self.labels)) != len(self.labels):
            raise ValueError("class labels must be distinct (case-insensitive)")

    @property
    def kind(self) -> str:
        return "class"

    def ordered(self) -> list[Label]:
        return [ClassLabel(name) for name in self.labels]

    def contains(self, label: Label) -> bool:
        return isinstance(label, ClassLabel) and label.name in self.labels

    def parse(self, text: str) -> Label:
        """Normalize a model answer: trim, strip quotes, case-insensitive match."""
        cleaned = text.strip().strip("'\".,;:!")
        for name in self.labels:
            if cleaned.lower() == name.lower():
                return ClassLabel(name)
        raise ValueError(f"{text!r} is not one of {list(self.labels)}")

    def display(self) -> str:
        return ", ".join(self.labels)


@dataclass(frozen=True)
class RankSchema:
    """The 1-5 rank scale (optionally narrowed, never widened)."""

    lo: int = RANK_MIN
    hi: int = RANK_MAX

    def __post_init__(self) -> None:
        if not (RANK_MIN <= self.lo <= self.hi <= RANK_MAX):
            raise ValueError(f"rank scale must sit inside [{RANK_MIN}, {RANK_MAX}]")

    @property
    def kind(self) -> str:
        return "rank"

    def ordered(self) -> list[Label]:
        return [Rank(v) for v in range(self.lo, self.hi + 1)]

    def contains(self, label: Label) -> bool:
        return isinstance(label, Rank) and self.lo <= label.value <= self.hi

    def parse(self, text: str) -> Label:
        """Accept a bare integer, tolerating punctuation and surrounding words."""
        cleaned = text.strip().strip("'\".,;:!")
        try:
            value = int(cleaned)
        except ValueError:
            raise ValueError(f"{text!r} is not an integer rank") from None
        rank = Rank(value) if RANK_MIN <= value <= RANK_MAX else None
        if rank is None or not self.contains(rank):
            raise ValueError(f"rank {value} outside scale [{self.lo}, {self.hi}]")
        return rank

    def display(self) -> str:
        return ", ".join(str(v) for v in range(self.lo, self.hi + 1))


LabelSchema = ClassSchema | RankSchema


def label_to_json(label: Label | None):
    """Class labels serialize as strings, ranks as integers."""
    if label is None:
        return None
    if isinstance(label, ClassLabel):
        return label.name
    return label.value


def label_from_json(value, schema: LabelSchema) -> Label | None:
    if value is None:
        return None
    if isinstance(value, bool):
        raise ValueError(f"invalid label value {value!r}")
    if isinstance(value, str):
        label: Label = ClassLabel(value)
    elif isinstance(value, int):
        label = Rank(value)
    else:
        raise ValueError(f"invalid label value {value!r}")
    if not schema.contains(label):
        raise ValueError(f"label {value!r} not in schema ({schema.display()})")
    return label


def schema_to_json(schema: LabelSchema) -> dict:
    if isinstance(schema, ClassSchema):
        return {"kind": "class", "labels": list(schema.labels)}
    return {"kind": "rank", "lo": schema.lo, "hi": schema.hi}


def schema_from_json(data: dict) -> LabelSchema:
    kind = data.get("kind")
    if kind == "class":
        return ClassSchema(tuple(data["labels"]))
    if kind == "rank":
        return RankSchema(int(data.get("lo", RANK_MIN)), int(data.get("hi", RANK_MAX)))
    raise ValueError(f"unknown schema kind {kind!r}")
