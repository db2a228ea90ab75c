"""Scoring a prompt candidate on the benchmark.

Classification scoring builds the confusion matrix and accuracy, selects
representative errors per class, and runs the analyzer meta-prompt over them.
Generative scoring runs the candidate over a fixed input set and averages the
ranks a calibrated ranker assigns to its outputs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .dataset import Record
from .errors import IncompleteRecord, ParseError
from .gateway import ChatMessage, Gateway, make_request
from .labels import Label, LabelSchema, Rank, RankSchema, label_from_json, label_to_json
from .estimation import parse_batched_output, REPROMPT_REMINDER
from .templates import TemplateSet

ANALYSIS_UNAVAILABLE = "no analysis available"

# An output ranked at or below this counts as a failure case for the analyzer.
GENERATION_ERROR_RANK = 3


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[Label, ...]
    counts: tuple[tuple[int, ...], ...]  # indexed (annotation, prediction)

    def count(self, annotation: Label, prediction: Label) -> int:
        i = self.labels.index(annotation)
        j = self.labels.index(prediction)
        return self.counts[i][j]

    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(len(self.labels)))

    def total(self) -> int:
        return sum(sum(row) for row in self.counts)


@dataclass
class EvalReport:
    score: float
    n_evaluated: int
    matrix: ConfusionMatrix | None = None
    errors_per_class: dict = field(default_factory=dict)  # Label -> [(text, predicted Label)]
    analysis: str | None = None
    per_input_ranks: list[int] | None = None
    outputs: list[str] | None = None

    def to_json(self) -> dict:
        return {
            "score": self.score,
            "n_evaluated": self.n_evaluated,
            "matrix": (
                {
                    "labels": [label_to_json(l) for l in self.matrix.labels],
                    "counts": [list(row) for row in self.matrix.counts],
                }
                if self.matrix
                else None
            ),
            "errors_per_class": [
                {
                    "annotation": label_to_json(annotation),
                    "errors": [[text, label_to_json(pred)] for text, pred in errors],
                }
                for annotation, errors in self.errors_per_class.items()
            ],
            "analysis": self.analysis,
            "per_input_ranks": self.per_input_ranks,
            "outputs": self.outputs,
        }

    @classmethod
    def from_json(cls, data: dict, schema: LabelSchema) -> "EvalReport":
        matrix = None
        if data.get("matrix"):
            matrix = ConfusionMatrix(
                labels=tuple(label_from_json(l, schema) for l in data["matrix"]["labels"]),
                counts=tuple(tuple(int(c) for c in row) for row in data["matrix"]["counts"]),
            )
        errors_map = {}
        for item in data.get("errors_per_class", []):
            annotation = label_from_json(item["annotation"], schema)
            errors_map[annotation] = [
                (text, label_from_json(pred, schema)) for text, pred in item["errors"]
            ]
        return cls(
            score=float(data["score"]),
            n_evaluated=int(data["n_evaluated"]),
            matrix=matrix,
            errors_per_class=errors_map,
            analysis=data.get("analysis"),
            per_input_ranks=data.get("per_input_ranks"),
            outputs=data.get("outputs"),
        )


@dataclass(frozen=True)
class ScoreFunction:
    kind: str  # accuracy | mean_rank
    ranker_prompt: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("accuracy", "mean_rank"):
            raise ValueError(f"unknown score function {self.kind!r}")
        if self.kind == "mean_rank" and not self.ranker_prompt:
            raise ValueError("mean_rank score function requires a calibrated ranker prompt")


# --- classification metrics ---------------------------------------------------

def _require_complete(records: list[Record]) -> None:
    for record in records:
        if record.annotation is None:
            raise IncompleteRecord(record.id, "annotation")
        if record.prediction is None:
            raise IncompleteRecord(record.id, "prediction")


def confusion(records: list[Record], schema: LabelSchema) -> ConfusionMatrix:
    """counts[a][p] = number of records annotated a and predicted p."""
    _require_complete(records)
    labels = tuple(schema.ordered())
    index = {label: i for i, label in enumerate(labels)}
    counts = [[0] * len(labels) for _ in labels]
    for record in records:
        if record.annotation not in index or record.prediction not in index:
            raise ValueError(f"record {record.id} labeled outside schema")
        counts[index[record.annotation]][index[record.prediction]] += 1
    return ConfusionMatrix(labels=labels, counts=tuple(tuple(row) for row in counts))


def accuracy(records: list[Record], rank_tolerance: int = 0) -> float:
    """Fraction of records whose prediction matches the annotation.

    For rank labels a nonzero tolerance accepts off-by-`tolerance` matches.
    Defined as 0.0 on an empty record list.
    """
    if not records:
        return 0.0
    _require_complete(records)
    correct = 0
    for record in records:
        a, p = record.annotation, record.prediction
        if rank_tolerance > 0 and isinstance(a, Rank) and isinstance(p, Rank):
            correct += int(abs(a.value - p.value) <= rank_tolerance)
        else:
            correct += int(a == p)
    return correct / len(records)


def select_errors(
    records: list[Record], max_per_class: int = 10, rng_seed: int = 0
) -> dict:
    """Up to max_per_class misclassified (text, prediction) pairs per class.

    Uniform subsampling with the given seed; a pure function of the records
    (sorted by id internally) and the seed.
    """
    _require_complete(records)
    by_class: dict[Label, list[Record]] = {}
    for record in sorted(records, key=lambda r: r.id):
        if record.annotation != record.prediction:
            by_class.setdefault(record.annotation, []).append(record)
    rng = random.Random(rng_seed)
    selected: dict[Label, list[tuple[str, Label]]] = {}
    for annotation in by_class:
        pool = by_class[annotation]
        chosen = pool if len(pool) <= max_per_class else rng.sample(pool, max_per_class)
        selected[annotation] = [(r.text, r.prediction) for r in chosen]
    return selected


# --- analyzer meta-prompt -------------------------------------------------------

def render_confusion(matrix: ConfusionMatrix | None) -> str:
    if matrix is None:
        return "(not a classification task)"
    lines = []
    for i, annotation in enumerate(matrix.labels):
        for j, prediction in enumerate(matrix.labels):
            lines.append(
                f"annotated {annotation}, predicted {prediction}: {matrix.counts[i][j]} cases"
            )
    return "\n".join(lines)


def render_errors(errors_per_class: dict) -> str:
    blocks = []
    for annotation, errors in errors_per_class.items():
        if not errors:
            continue
        lines = [f"Samples annotated '{annotation}' that the prompt got wrong:"]
        for text, prediction in errors:
            lines.append(f"- predicted '{prediction}': {text}")
        blocks.append("\n".join(lines))
    if not blocks:
        return "There were no errors; every sample was labeled correctly."
    return "\n\n".join(blocks)


def analyze(
    report: EvalReport,
    prompt: str,
    task_description: str,
    gateway: Gateway,
    templates: TemplateSet | None = None,
    model_id: str = "mock-model",
) -> str:
    """Render the analyzer meta-prompt and return the model's analysis verbatim."""
    templates = templates or TemplateSet()
    user = templates.render(
        "analyzer",
        task_description=task_description,
        prompt=prompt,
        score=f"{report.score:.4f}",
        confusion=render_confusion(report.matrix),
        errors=render_errors(report.errors_per_class),
    )
    request = make_request(
        role_tag="analyzer",
        messages=[ChatMessage("user", user)],
        model_id=model_id,
    )
    return gateway.complete(request).content


# --- generative scoring -----------------------------------------------------------

@dataclass(frozen=True)
class MeanRankResult:
    score: float
    per_input_ranks: tuple[int, ...]
    outputs: tuple[str, ...]


def _rank_format(schema: LabelSchema) -> str:
    return f"Answer with a single integer: {schema.display()}."


def mean_rank_score(
    generation_prompt: str,
    eval_inputs: list,
    ranker: ScoreFunction,
    gateway: Gateway,
    rank_schema: LabelSchema | None = None,
    model_id: str = "mock-model",
    parallelism: int = 1,
) -> MeanRankResult:
    """Generate one output per input and average the ranks the ranker assigns."""
    if ranker.kind != "mean_rank":
        raise ValueError("mean_rank_score requires a mean_rank score function")
    if not eval_inputs:
        raise ValueError("mean_rank_score needs at least one evaluation input")
    schema = rank_schema or RankSchema()
    texts = [item.text if isinstance(item, Record) else str(item) for item in eval_inputs]

    gen_requests = [
        make_request(
            role_tag="predictor",
            messages=[ChatMessage("system", generation_prompt), ChatMessage("user", text)],
            model_id=model_id,
        )
        for text in texts
    ]
    outputs = [r.content for r in gateway.complete_many(gen_requests, parallelism=parallelism)]

    rank_requests = [
        make_request(
            role_tag="ranker",
            messages=[
                ChatMessage("system", ranker.ranker_prompt),
                ChatMessage("user", f"Candidate output:\n{output}\n\n{_rank_format(schema)}"),
            ],
            model_id=model_id,
        )
        for output in outputs
    ]
    responses = gateway.complete_many(rank_requests, parallelism=parallelism)
    ranks: list[int] = []
    for request, response in zip(rank_requests, responses):
        try:
            label = parse_batched_output(response.content, 1, schema)[0]
        except ParseError:
            retry_messages = list(request.messages) + [
                ChatMessage("assistant", response.content or "(empty)"),
                ChatMessage("user", REPROMPT_REMINDER),
            ]
            retry = gateway.complete(
                make_request("ranker", retry_messages, model_id=model_id)
            )
            label = parse_batched_output(retry.content, 1, schema)[0]
        ranks.append(label.value)
    return MeanRankResult(
        score=sum(ranks) / len(ranks),
        per_input_ranks=tuple(ranks),
        outputs=tuple(outputs),
    )


def generation_error_report(result: MeanRankResult, inputs: list[str]) -> dict:
    """Failure cases for the analyzer: outputs ranked at or below the cutoff."""
    errors: dict[Label, list[tuple[str, Label]]] = {}
    for text, output, rank in zip(inputs, result.outputs, result.per_input_ranks):
        if rank <= GENERATION_ERROR_RANK:
            entry = (f"input: {text}\noutput: {output}", Rank(rank))
            errors.setdefault(Rank(rank), []).append(entry)
    return errors
