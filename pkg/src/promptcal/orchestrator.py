"""Run pipelines: classification, ranker calibration + generation, squashing.

One iteration of the core loop synthesizes boundary samples, annotates them,
predicts with the current prompt over the whole benchmark, evaluates, and asks
the prompt generator for a better prompt. The loop stops on budget, on
convergence (patience over the running best), or at the iteration cap, in
that priority order. Every iteration ends with an atomic checkpoint; resuming
a mock run reproduces the uninterrupted run byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

from .dataset import Dataset, DedupPolicy, Record
from .errors import (
    BudgetExceeded,
    ConfigError,
    RunInterrupted,
    StaleCheckpoint,
    SynthesisParseError,
)
from .estimation import EstimatorSpec, estimate_batch
from .evaluation import (
    ANALYSIS_UNAVAILABLE,
    EvalReport,
    ScoreFunction,
    accuracy,
    analyze,
    confusion,
    generation_error_report,
    mean_rank_score,
    select_errors,
)
from .gateway import (
    BudgetLimits,
    ChatMessage,
    Gateway,
    UsageLedger,
    check_budget,
    BudgetDecision,
    make_request,
)
from .labels import (
    Label,
    LabelSchema,
    Rank,
    RankSchema,
    label_from_json,
    label_to_json,
    schema_from_json,
    schema_to_json,
)
from .prompt_opt import History, PromptCandidate, best, build_prompt_gen_request, parse_new_prompt
from .synthesis import (
    SYNTHESIS_REMINDER,
    SynthesisContext,
    build_initial_request,
    build_step_request,
    parse_samples,
)
from .templates import TemplateSet

MODES = ("classify", "generate", "squash")

ProgressFn = Callable[[str], None]


class StopReason(Enum):
    CONVERGED = "converged"
    BUDGET_EXHAUSTED = "budget_exhausted"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class FeatureToggles:
    iterative_generation: bool = True
    synthetic_data: bool = True
    analyzer: bool = True


@dataclass(frozen=True)
class SeedSample:
    text: str
    annotation: Label | None = None


@dataclass
class RunConfig:
    mode: str
    task_description: str
    initial_prompt: str
    schema: LabelSchema
    annotator: EstimatorSpec
    seed_samples: list[SeedSample] = field(default_factory=list)
    predictor_model: str = "mock-model"
    prompt_batch_size: int = 5
    parallelism: int = 1
    max_iterations: int = 50
    patience: int = 5
    min_delta: float = 0.0
    budget: BudgetLimits = field(default_factory=BudgetLimits)
    samples_per_iteration: int = 10
    rng_seed: int = 0
    features: FeatureToggles = field(default_factory=FeatureToggles)
    boundary_targets: list[Label] | None = None
    style_context_size: int = 5
    history_window: int = 7
    synthesis_history_window: int = 3
    synthesis_errors_per_prompt: int = 3
    max_errors_per_class: int = 10
    dedup_threshold: float = 0.95
    eval_input_count: int = 10
    rank_tolerance: int = 0
    annotation_poll_interval: float = 2.0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.task_description.strip():
            raise ConfigError("task_description must be non-empty")
        if not self.initial_prompt.strip():
            raise ConfigError("initial_prompt must be non-empty")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.min_delta < 0:
            raise ConfigError("min_delta must be >= 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.samples_per_iteration < 1:
            raise ConfigError("samples_per_iteration must be >= 1")
        if not self.features.synthetic_data and not self.seed_samples:
            raise ConfigError("synthetic_data=false requires seed samples or real data")
        if self.mode == "squash":
            if self.annotator.kind != "batch_aggregate":
                raise ConfigError("squash mode requires a batch_aggregate annotator")
        if self.mode == "generate" and not isinstance(self.schema, RankSchema):
            raise ConfigError("generate mode uses the 1-5 rank schema")
        if self.annotator.role != "annotator":
            raise ConfigError("the configured annotator must have role 'annotator'")

    # -- serialization (canonical; the hash is computed over this form) ---------

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "task_description": self.task_description,
            "initial_prompt": self.initial_prompt,
            "schema": schema_to_json(self.schema),
            "annotator": _estimator_to_json(self.annotator),
            "seed_samples": [
                {"text": s.text, "annotation": label_to_json(s.annotation)}
                for s in self.seed_samples
            ],
            "predictor_model": self.predictor_model,
            "prompt_batch_size": self.prompt_batch_size,
            "parallelism": self.parallelism,
            "max_iterations": self.max_iterations,
            "patience": self.patience,
            "min_delta": self.min_delta,
            "budget": {"max_cost": self.budget.max_cost, "max_tokens": self.budget.max_tokens},
            "samples_per_iteration": self.samples_per_iteration,
            "rng_seed": self.rng_seed,
            "features": {
                "iterative_generation": self.features.iterative_generation,
                "synthetic_data": self.features.synthetic_data,
                "analyzer": self.features.analyzer,
            },
            "boundary_targets": (
                [label_to_json(l) for l in self.boundary_targets] if self.boundary_targets else None
            ),
            "style_context_size": self.style_context_size,
            "history_window": self.history_window,
            "synthesis_history_window": self.synthesis_history_window,
            "synthesis_errors_per_prompt": self.synthesis_errors_per_prompt,
            "max_errors_per_class": self.max_errors_per_class,
            "dedup_threshold": self.dedup_threshold,
            "eval_input_count": self.eval_input_count,
            "rank_tolerance": self.rank_tolerance,
            "annotation_poll_interval": self.annotation_poll_interval,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RunConfig":
        schema = schema_from_json(data["schema"])
        config = cls(
            mode=data["mode"],
            task_description=data["task_description"],
            initial_prompt=data["initial_prompt"],
            schema=schema,
            annotator=_estimator_from_json(data["annotator"], schema),
            seed_samples=[
                SeedSample(s["text"], label_from_json(s.get("annotation"), schema))
                for s in data.get("seed_samples", [])
            ],
            predictor_model=data.get("predictor_model", "mock-model"),
            prompt_batch_size=int(data.get("prompt_batch_size", 5)),
            parallelism=int(data.get("parallelism", 1)),
            max_iterations=int(data.get("max_iterations", 50)),
            patience=int(data.get("patience", 5)),
            min_delta=float(data.get("min_delta", 0.0)),
            budget=BudgetLimits(
                max_cost=data.get("budget", {}).get("max_cost"),
                max_tokens=data.get("budget", {}).get("max_tokens"),
            ),
            samples_per_iteration=int(data.get("samples_per_iteration", 10)),
            rng_seed=int(data.get("rng_seed", 0)),
            features=FeatureToggles(
                iterative_generation=bool(data.get("features", {}).get("iterative_generation", True)),
                synthetic_data=bool(data.get("features", {}).get("synthetic_data", True)),
                analyzer=bool(data.get("features", {}).get("analyzer", True)),
            ),
            boundary_targets=(
                [label_from_json(l, schema) for l in data["boundary_targets"]]
                if data.get("boundary_targets")
                else None
            ),
            style_context_size=int(data.get("style_context_size", 5)),
            history_window=int(data.get("history_window", 7)),
            synthesis_history_window=int(data.get("synthesis_history_window", 3)),
            synthesis_errors_per_prompt=int(data.get("synthesis_errors_per_prompt", 3)),
            max_errors_per_class=int(data.get("max_errors_per_class", 10)),
            dedup_threshold=float(data.get("dedup_threshold", 0.95)),
            eval_input_count=int(data.get("eval_input_count", 10)),
            rank_tolerance=int(data.get("rank_tolerance", 0)),
            annotation_poll_interval=float(data.get("annotation_poll_interval", 2.0)),
        )
        return config

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _estimator_to_json(spec: EstimatorSpec) -> dict:
    return {
        "kind": spec.kind,
        "role": spec.role,
        "prompt_text": spec.prompt_text,
        "task_description": spec.task_description,
        "model_id": spec.model_id,
        "temperature": spec.temperature,
        "max_tokens": spec.max_tokens,
        "prompt_batch_size": spec.prompt_batch_size,
        "parallelism": spec.parallelism,
        "members": [_estimator_to_json(m) for m in spec.members],
        "aggregation": (
            {
                "rule": spec.aggregation.rule,
                "positive_label": label_to_json(spec.aggregation.positive_label),
            }
            if spec.aggregation
            else None
        ),
    }


def _estimator_from_json(data: dict, schema: LabelSchema) -> EstimatorSpec:
    from .estimation import AggregationPolicy

    aggregation = None
    if data.get("aggregation"):
        aggregation = AggregationPolicy(
            rule=data["aggregation"]["rule"],
            positive_label=label_from_json(data["aggregation"].get("positive_label"), schema),
        )
    return EstimatorSpec(
        kind=data["kind"],
        role=data["role"],
        label_schema=schema,
        prompt_text=data.get("prompt_text", ""),
        task_description=data.get("task_description", ""),
        model_id=data.get("model_id", "mock-model"),
        temperature=data.get("temperature"),
        max_tokens=int(data.get("max_tokens", 1024)),
        prompt_batch_size=int(data.get("prompt_batch_size", 5)),
        parallelism=int(data.get("parallelism", 1)),
        members=[_estimator_from_json(m, schema) for m in data.get("members", [])],
        aggregation=aggregation,
    )


# --- stop criteria ------------------------------------------------------------

def _converged(scores: list[float], patience: int, min_delta: float) -> bool:
    """True when the running best has not improved by >= min_delta (strictly,
    when min_delta is 0) for the last `patience` candidates."""
    best_so_far = float("-inf")
    streak = 0
    for score in scores:
        delta = score - best_so_far
        improved = delta > 0 and delta >= min_delta
        if improved:
            streak = 0
        else:
            streak += 1
        best_so_far = max(best_so_far, score)
    return streak >= patience


def should_stop(history: History, ledger: UsageLedger, config: RunConfig) -> StopReason | None:
    """Stop priority: budget, then convergence, then the iteration cap."""
    if check_budget(ledger, config.budget) is BudgetDecision.HALT:
        return StopReason.BUDGET_EXHAUSTED
    if _converged(history.scores(), config.patience, config.min_delta):
        return StopReason.CONVERGED
    if len(history) >= config.max_iterations:
        return StopReason.MAX_ITERATIONS
    return None


# --- results --------------------------------------------------------------------

@dataclass
class RunResult:
    calibrated_prompt: str
    history: History
    stop_reason: StopReason
    ledger: UsageLedger
    out_dir: Path | None = None
    dataset: Dataset | None = None


@dataclass
class GenerationResult:
    calibrated_generation_prompt: str
    ranker_prompt: str
    ranker_task_description: str
    phase1: RunResult
    history: History
    stop_reason: StopReason
    ledger: UsageLedger
    eval_inputs: list[str] = field(default_factory=list)
    ledger_after_phase1: dict = field(default_factory=dict)
    out_dir: Path | None = None


# --- shared driver machinery --------------------------------------------------------

def _interleave_errors(report: EvalReport, schema: LabelSchema, limit: int) -> list[tuple[str, Label, Label]]:
    """Round-robin across classes so one class cannot monopolize the window."""
    per_class = [
        [(text, annotation, predicted) for text, predicted in report.errors_per_class.get(annotation, [])]
        for annotation in schema.ordered()
        if annotation in report.errors_per_class
    ]
    picked: list[tuple[str, Label, Label]] = []
    depth = 0
    while len(picked) < limit and any(depth < len(group) for group in per_class):
        for group in per_class:
            if depth < len(group) and len(picked) < limit:
                picked.append(group[depth])
        depth += 1
    return picked


def _rng_state_to_json(state) -> list:
    return [state[0], list(state[1]), state[2]]


def _rng_state_from_json(data) -> tuple:
    return (data[0], tuple(data[1]), data[2])


class _LoopDriver:
    """State and plumbing shared by the classification and generation loops."""

    def __init__(
        self,
        config: RunConfig,
        gateway: Gateway,
        templates: TemplateSet,
        out_dir: Path | None,
        service,
        on_progress: ProgressFn | None,
        interrupt_after: int | None,
    ):
        self.config = config
        self.gateway = gateway
        self.templates = templates
        self.out_dir = out_dir
        self.service = service
        self.on_progress = on_progress
        self.interrupt_after = interrupt_after
        self.history = History(window=config.history_window)
        self.rng = random.Random(config.rng_seed)
        self.current_prompt = config.initial_prompt
        self.next_iteration = 0
        self.stop_reason: StopReason | None = None
        self.phase_state: dict | None = None

    # -- progress ---------------------------------------------------------------

    def progress(self, iteration: int, score: float) -> None:
        if self.on_progress is None:
            return
        best_score = max(c.score for c in self.history.candidates)
        self.on_progress(
            f"iter={iteration:03d} score={score:.4f} best={best_score:.4f} "
            f"tokens={self.gateway.ledger.total_tokens()}"
        )

    # -- proposal ------------------------------------------------------------------

    def propose_next_prompt(self) -> None:
        latest = self.history.candidates[-1]
        analysis = latest.report.analysis if latest.report and latest.report.analysis else ANALYSIS_UNAVAILABLE
        request = build_prompt_gen_request(
            self.history,
            analysis,
            self.config.task_description,
            templates=self.templates,
            model_id=self.config.predictor_model,
        )
        response = self.gateway.complete(request)
        self.current_prompt = parse_new_prompt(response.content)

    # -- checkpoints -------------------------------------------------------------------

    def checkpoint_dir(self) -> Path | None:
        if self.out_dir is None:
            return None
        path = self.out_dir / "checkpoints"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def write_checkpoint(self, iteration: int, dataset: Dataset | None) -> Path | None:
        ckpt_dir = self.checkpoint_dir()
        if ckpt_dir is None:
            return None
        dataset_file = None
        if dataset is not None:
            dataset_file = f"iter_{iteration:04d}.dataset.jsonl"
            dataset.save(ckpt_dir / dataset_file)
        mock_script = self.gateway.config.mock_script
        state = {
            "version": 1,
            "config_hash": self.config.config_hash(),
            "config": self.config.to_json(),
            "iteration": iteration,
            "current_prompt": self.current_prompt,
            "history": [
                {
                    "iteration": c.iteration,
                    "score": c.score,
                    "text": c.text,
                    "report": c.report.to_json() if c.report else None,
                }
                for c in self.history.candidates
            ],
            "ledger": self.gateway.ledger.to_json(),
            "rng_state": _rng_state_to_json(self.rng.getstate()),
            "mock_cursors": mock_script.cursors() if mock_script else None,
            "dataset_file": dataset_file,
            "completed": self.stop_reason is not None,
            "stop_reason": self.stop_reason.value if self.stop_reason else None,
            "phase_state": self.phase_state,
        }
        path = ckpt_dir / f"iter_{iteration:04d}.json"
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(state, fh, ensure_ascii=False, indent=2)
        os.replace(tmp, path)
        return path

    def restore(self, state: dict, dataset_schema: LabelSchema) -> Dataset | None:
        """Rehydrate loop state (and the gateway's ledger and mock cursors)."""
        self.current_prompt = state["current_prompt"]
        self.next_iteration = state["iteration"] + 1
        for item in state["history"]:
            report = EvalReport.from_json(item["report"], dataset_schema) if item.get("report") else None
            self.history.candidates.append(
                PromptCandidate(item["text"], item["score"], item["iteration"], report)
            )
        self.rng.setstate(_rng_state_from_json(state["rng_state"]))
        self.gateway.ledger.restore(state["ledger"])
        if state.get("mock_cursors") is not None:
            if self.gateway.config.mock_script is None:
                raise StaleCheckpoint("checkpoint carries mock cursors but backend is remote")
            self.gateway.config.mock_script.restore_cursors(state["mock_cursors"])
        self.phase_state = state.get("phase_state")
        if state.get("stop_reason"):
            self.stop_reason = StopReason(state["stop_reason"])
        dataset_file = state.get("dataset_file")
        if dataset_file:
            return Dataset.load(
                Path(state["_checkpoint_dir"]) / dataset_file, dataset_schema,
                embedder=self.gateway.embed,
            )
        return None

    def maybe_interrupt(self, iteration: int, checkpoint_path: Path | None) -> None:
        if self.interrupt_after is not None and iteration == self.interrupt_after:
            raise RunInterrupted(str(checkpoint_path) if checkpoint_path else "(no checkpoint)")


# --- classification pipeline ------------------------------------------------------------

def _predictor_spec(config: RunConfig, prompt_text: str) -> EstimatorSpec:
    return EstimatorSpec(
        kind="llm",
        role="predictor",
        label_schema=config.schema,
        prompt_text=prompt_text,
        task_description=config.task_description,
        model_id=config.predictor_model,
        prompt_batch_size=config.prompt_batch_size,
        parallelism=config.parallelism,
    )


class _ClassificationRun:
    def __init__(self, driver: _LoopDriver, dataset: Dataset | None = None):
        self.d = driver
        self.config = driver.config
        self.dataset = dataset if dataset is not None else Dataset(
            self.config.schema, embedder=driver.gateway.embed
        )

    def seed(self) -> None:
        if not self.config.seed_samples:
            return
        self.dataset.insert_records(
            [
                {"text": s.text, "annotation": s.annotation, "source": "user_seed"}
                for s in self.config.seed_samples
            ],
            policy=DedupPolicy(self.config.dedup_threshold),
            iteration=0,
        )

    # -- synthesis -----------------------------------------------------------------

    def _synthesis_context(self, iteration: int) -> SynthesisContext:
        config = self.config
        history_entries: list[tuple[str, list[tuple[str, Label, Label]]]] = []
        confusing_texts: list[str] = []
        if iteration > 0:
            for candidate in self.d.history.candidates[-config.synthesis_history_window :]:
                if candidate.report is None:
                    history_entries.append((candidate.text, []))
                    continue
                picked = _interleave_errors(
                    candidate.report, config.schema, config.synthesis_errors_per_prompt
                )
                history_entries.append((candidate.text, picked))
                confusing_texts.extend(text for text, _, _ in picked)
        style_context: list[Record] = []
        if self.dataset.sampling_pool():
            queries = confusing_texts or [config.task_description]
            style_context = self.dataset.semantic_sample(queries, config.style_context_size)
        return SynthesisContext(
            iteration=iteration,
            task_description=config.task_description,
            current_prompt=self.d.current_prompt,
            label_schema=config.schema,
            samples_per_iteration=config.samples_per_iteration,
            history=history_entries,
            style_context=style_context,
            boundary_targets=config.boundary_targets,
            seed_examples=[(s.text, s.annotation) for s in config.seed_samples]
            if iteration == 0
            else [],
            model_id=config.predictor_model,
        )

    def _synthesize(self, iteration: int) -> None:
        config = self.config
        ctx = self._synthesis_context(iteration)
        request = (
            build_initial_request(ctx, self.d.templates)
            if iteration == 0
            else build_step_request(ctx, self.d.templates)
        )
        response = self.d.gateway.complete(request)
        try:
            sample_set = parse_samples(response.content, config.samples_per_iteration, config.schema)
        except SynthesisParseError:
            retry_messages = list(request.messages) + [
                ChatMessage("assistant", response.content or "(empty)"),
                ChatMessage("user", SYNTHESIS_REMINDER),
            ]
            retry = self.d.gateway.complete(
                make_request("sample_gen", retry_messages, model_id=config.predictor_model)
            )
            sample_set = parse_samples(retry.content, config.samples_per_iteration, config.schema)
        self.dataset.insert_records(
            [{"text": text, "source": "synthetic"} for text in sample_set.texts],
            policy=DedupPolicy(config.dedup_threshold),
            iteration=iteration,
        )

    # -- one iteration ------------------------------------------------------------------

    def iterate(self, iteration: int) -> StopReason | None:
        config = self.config
        if config.features.synthetic_data and (
            iteration == 0 or config.features.iterative_generation
        ):
            self._synthesize(iteration)

        unannotated = [r for r in self.dataset if r.annotation is None]
        if unannotated:
            labels = estimate_batch(
                config.annotator,
                unannotated,
                gateway=self.d.gateway,
                templates=self.d.templates,
                service=self.d.service,
                poll_interval=config.annotation_poll_interval,
            )
            self.dataset.set_labels(labels, config.annotator.record_field)

        pool = [r for r in self.dataset if r.annotation is not None]
        if pool:
            spec = _predictor_spec(config, self.d.current_prompt)
            labels = estimate_batch(spec, pool, gateway=self.d.gateway, templates=self.d.templates)
            self.dataset.set_labels(labels, spec.record_field)

        evaluated = [r for r in self.dataset if r.annotation is not None and r.prediction is not None]
        score = accuracy(evaluated, rank_tolerance=config.rank_tolerance)
        matrix = confusion(evaluated, config.schema)
        errors = select_errors(
            evaluated, config.max_errors_per_class, rng_seed=self.d.rng.randrange(2**32)
        )
        report = EvalReport(
            score=score, n_evaluated=len(evaluated), matrix=matrix, errors_per_class=errors
        )
        if config.features.analyzer:
            report.analysis = analyze(
                report,
                self.d.current_prompt,
                config.task_description,
                self.d.gateway,
                templates=self.d.templates,
                model_id=config.predictor_model,
            )
        else:
            report.analysis = ANALYSIS_UNAVAILABLE

        self.d.history.append(
            PromptCandidate(self.d.current_prompt, score, iteration, report)
        )
        self.d.progress(iteration, score)
        stop = should_stop(self.d.history, self.d.gateway.ledger, config)
        if stop is None:
            self.d.propose_next_prompt()
        return stop

    def run(self) -> StopReason:
        driver = self.d
        if driver.next_iteration == 0 and len(self.dataset) == 0:
            self.seed()
        iteration = driver.next_iteration
        stop: StopReason | None = driver.stop_reason
        while stop is None:
            try:
                stop = self.iterate(iteration)
            except BudgetExceeded:
                stop = StopReason.BUDGET_EXHAUSTED
            driver.stop_reason = stop
            path = driver.write_checkpoint(iteration, self.dataset)
            if stop is None:
                driver.maybe_interrupt(iteration, path)
            iteration += 1
        return stop


def _write_classification_artifacts(driver: _LoopDriver, dataset: Dataset) -> None:
    out = driver.out_dir
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    run_info = {
        "config": driver.config.to_json(),
        "stop_reason": driver.stop_reason.value,
        "iterations": len(driver.history),
        "ledger": driver.gateway.ledger.to_json(),
    }
    (out / "run.json").write_text(
        json.dumps(run_info, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for candidate in driver.history.candidates:
            fh.write(
                json.dumps(
                    {
                        "iteration": candidate.iteration,
                        "score": candidate.score,
                        "prompt": candidate.text,
                        "analysis": candidate.report.analysis if candidate.report else None,
                        "n_evaluated": candidate.report.n_evaluated if candidate.report else 0,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    dataset.save(out / "dataset.jsonl")
    if driver.history.candidates:
        final = best(driver.history).text
    else:
        final = driver.config.initial_prompt
    (out / "final_prompt.txt").write_text(final + "\n", encoding="utf-8")


def run_classification(
    config: RunConfig,
    gateway: Gateway,
    out_dir: str | Path | None = None,
    service=None,
    templates: TemplateSet | None = None,
    on_progress: ProgressFn | None = None,
    interrupt_after: int | None = None,
    _dataset: Dataset | None = None,
    _driver: _LoopDriver | None = None,
) -> RunResult:
    """Calibrate a classification prompt; also the engine for squash runs and
    for the ranking phase of generation runs."""
    config.validate()
    templates = templates or TemplateSet()
    out = Path(out_dir) if out_dir else None
    driver = _driver or _LoopDriver(
        config, gateway, templates, out, service, on_progress, interrupt_after
    )
    run = _ClassificationRun(driver, dataset=_dataset)
    run.run()
    _write_classification_artifacts(driver, run.dataset)
    calibrated = (
        best(driver.history).text if driver.history.candidates else config.initial_prompt
    )
    return RunResult(
        calibrated_prompt=calibrated,
        history=driver.history,
        stop_reason=driver.stop_reason,
        ledger=gateway.ledger,
        out_dir=out,
        dataset=run.dataset,
    )


def run_squash(
    config: RunConfig,
    gateway: Gateway,
    out_dir: str | Path | None = None,
    service=None,
    templates: TemplateSet | None = None,
    on_progress: ProgressFn | None = None,
    interrupt_after: int | None = None,
) -> RunResult:
    """Calibrate one prompt against the fused decision of several estimators."""
    if config.annotator.kind != "batch_aggregate":
        raise ConfigError("squash mode requires a batch_aggregate annotator")
    return run_classification(
        config,
        gateway,
        out_dir=out_dir,
        service=service,
        templates=templates,
        on_progress=on_progress,
        interrupt_after=interrupt_after,
    )


# --- generation pipeline -----------------------------------------------------------

def derive_ranking_task(
    initial_prompt: str,
    task_description: str,
    gateway: Gateway,
    templates: TemplateSet | None = None,
    model_id: str = "mock-model",
) -> tuple[str, str]:
    """Rephrase the generative task into a 1-5 ranking task via the two
    modifier meta-prompts. Returns (ranker_task_description, ranker_prompt)."""
    templates = templates or TemplateSet()
    outputs = []
    for template_name in ("ranker_task_description", "ranker_prompt"):
        user = templates.render(
            template_name, task_description=task_description, initial_prompt=initial_prompt
        )
        request = make_request("modifier", [ChatMessage("user", user)], model_id=model_id)
        outputs.append(parse_new_prompt(gateway.complete(request).content))
    return outputs[0], outputs[1]


def _synthesize_eval_inputs(
    config: RunConfig, gateway: Gateway, templates: TemplateSet
) -> list[str]:
    """One dedicated call producing the fixed phase-2 evaluation input set."""
    count = config.eval_input_count
    user = templates.render(
        "eval_inputs",
        task_description=config.task_description,
        count=str(count),
        format=(
            f"Output exactly {count} numbered lines, one input per line, "
            "formatted as '<index>. <input text>'. Do not add anything else."
        ),
    )
    request = make_request("modifier", [ChatMessage("user", user)], model_id=config.predictor_model)
    response = gateway.complete(request)
    try:
        sample_set = parse_samples(response.content, count, RankSchema())
    except SynthesisParseError:
        retry_messages = list(request.messages) + [
            ChatMessage("assistant", response.content or "(empty)"),
            ChatMessage("user", SYNTHESIS_REMINDER),
        ]
        retry = gateway.complete(
            make_request("modifier", retry_messages, model_id=config.predictor_model)
        )
        sample_set = parse_samples(retry.content, count, RankSchema())
    return list(sample_set.texts)


class _GenerationPhase2:
    def __init__(self, driver: _LoopDriver, ranker_prompt: str, eval_inputs: list[str]):
        self.d = driver
        self.config = driver.config
        self.ranker = ScoreFunction(kind="mean_rank", ranker_prompt=ranker_prompt)
        self.eval_inputs = eval_inputs

    def iterate(self, iteration: int) -> StopReason | None:
        config = self.config
        result = mean_rank_score(
            self.d.current_prompt,
            self.eval_inputs,
            self.ranker,
            self.d.gateway,
            rank_schema=RankSchema(),
            model_id=config.predictor_model,
            parallelism=config.parallelism,
        )
        report = EvalReport(
            score=result.score,
            n_evaluated=len(self.eval_inputs),
            matrix=None,
            errors_per_class=generation_error_report(result, self.eval_inputs),
            per_input_ranks=list(result.per_input_ranks),
            outputs=list(result.outputs),
        )
        if config.features.analyzer:
            report.analysis = analyze(
                report,
                self.d.current_prompt,
                config.task_description,
                self.d.gateway,
                templates=self.d.templates,
                model_id=config.predictor_model,
            )
        else:
            report.analysis = ANALYSIS_UNAVAILABLE
        self.d.history.append(PromptCandidate(self.d.current_prompt, result.score, iteration, report))
        self.d.progress(iteration, result.score)
        stop = should_stop(self.d.history, self.d.gateway.ledger, config)
        if stop is None:
            self.d.propose_next_prompt()
        return stop

    def run(self) -> StopReason:
        driver = self.d
        iteration = driver.next_iteration
        stop: StopReason | None = driver.stop_reason
        while stop is None:
            try:
                stop = self.iterate(iteration)
            except BudgetExceeded:
                stop = StopReason.BUDGET_EXHAUSTED
            driver.stop_reason = stop
            driver.phase_state = {
                "phase": "generation",
                "ranker_prompt": self.ranker.ranker_prompt,
                "eval_inputs": self.eval_inputs,
            }
            path = driver.write_checkpoint(iteration, None)
            if stop is None:
                driver.maybe_interrupt(iteration, path)
            iteration += 1
        return stop


def _write_generation_artifacts(driver: _LoopDriver, result: "GenerationResult") -> None:
    out = driver.out_dir
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    run_info = {
        "config": driver.config.to_json(),
        "stop_reason": result.stop_reason.value,
        "iterations": len(result.history),
        "ranker_task_description": result.ranker_task_description,
        "ranker_prompt": result.ranker_prompt,
        "eval_inputs": result.eval_inputs,
        "ledger_after_phase1": result.ledger_after_phase1,
        "ledger": driver.gateway.ledger.to_json(),
    }
    (out / "run.json").write_text(
        json.dumps(run_info, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for candidate in result.history.candidates:
            fh.write(
                json.dumps(
                    {
                        "iteration": candidate.iteration,
                        "score": candidate.score,
                        "prompt": candidate.text,
                        "per_input_ranks": candidate.report.per_input_ranks if candidate.report else None,
                        "analysis": candidate.report.analysis if candidate.report else None,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    (out / "final_prompt.txt").write_text(result.calibrated_generation_prompt + "\n", encoding="utf-8")


def run_generation(
    config: RunConfig,
    gateway: Gateway,
    out_dir: str | Path | None = None,
    service=None,
    templates: TemplateSet | None = None,
    on_progress: ProgressFn | None = None,
    interrupt_after: int | None = None,
    _phase2_resume: _LoopDriver | None = None,
    _phase1_result: RunResult | None = None,
    _generation_state: dict | None = None,
) -> GenerationResult:
    """Two-phase generative calibration.

    Phase 1 derives a 1-5 ranking task from the generative task and calibrates
    a ranker prompt for it with the classification pipeline, targeting
    boundary samples from the top two ranks. Phase 2 freezes an evaluation
    input set and then only evaluates and proposes: each candidate generation
    prompt is scored by the mean rank the calibrated ranker assigns to its
    outputs. Human annotations, when configured, are needed only in phase 1.
    """
    config.validate()
    if config.mode != "generate":
        raise ConfigError("run_generation requires mode='generate'")
    templates = templates or TemplateSet()
    out = Path(out_dir) if out_dir else None

    if _generation_state is None:
        ranker_task, ranker_initial = derive_ranking_task(
            config.initial_prompt,
            config.task_description,
            gateway,
            templates=templates,
            model_id=config.predictor_model,
        )
        phase1_config = replace(
            config,
            mode="classify",
            task_description=ranker_task,
            initial_prompt=ranker_initial,
            schema=RankSchema(),
            seed_samples=[
                s for s in config.seed_samples if isinstance(s.annotation, Rank)
            ],
            boundary_targets=[Rank(4), Rank(5)],
            max_iterations=config.max_iterations,
        )
        phase1 = run_classification(
            phase1_config,
            gateway,
            out_dir=(out / "phase1") if out else None,
            service=service,
            templates=templates,
            on_progress=on_progress,
            interrupt_after=interrupt_after,
        )
        ranker_prompt = phase1.calibrated_prompt
        eval_inputs = _synthesize_eval_inputs(config, gateway, templates)
        ledger_after_phase1 = gateway.ledger.to_json()
        if out:
            mock_script = gateway.config.mock_script
            state_blob = {
                "ranker_task_description": ranker_task,
                "ranker_prompt": ranker_prompt,
                "eval_inputs": eval_inputs,
                "ledger_after_phase1": ledger_after_phase1,
                "mock_cursors": mock_script.cursors() if mock_script else None,
            }
            out.mkdir(parents=True, exist_ok=True)
            (out / "generation_state.json").write_text(
                json.dumps(state_blob, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
            )
    else:
        ranker_task = _generation_state["ranker_task_description"]
        ranker_prompt = _generation_state["ranker_prompt"]
        eval_inputs = _generation_state["eval_inputs"]
        ledger_after_phase1 = _generation_state["ledger_after_phase1"]
        phase1 = _phase1_result

    driver = _phase2_resume or _LoopDriver(
        config, gateway, templates, (out / "phase2") if out else None, service, on_progress, interrupt_after
    )
    phase2 = _GenerationPhase2(driver, ranker_prompt, eval_inputs)
    stop = phase2.run()

    calibrated = best(driver.history).text if driver.history.candidates else config.initial_prompt
    result = GenerationResult(
        calibrated_generation_prompt=calibrated,
        ranker_prompt=ranker_prompt,
        ranker_task_description=ranker_task,
        phase1=phase1,
        history=driver.history,
        stop_reason=stop,
        ledger=gateway.ledger,
        eval_inputs=eval_inputs,
        ledger_after_phase1=ledger_after_phase1,
        out_dir=out,
    )
    driver.out_dir = out
    _write_generation_artifacts(driver, result)
    return result


# --- resume -----------------------------------------------------------------------


def _latest_checkpoint(checkpoint_dir: Path) -> Path:
    candidates = sorted(checkpoint_dir.glob("iter_*.json"))
    if not candidates:
        raise StaleCheckpoint(f"no checkpoints under {checkpoint_dir}")
    return candidates[-1]


def _load_checkpoint(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        state = json.load(fh)
    state["_checkpoint_dir"] = str(path.parent)
    return state


def resume_run(
    checkpoint: str | Path,
    gateway: Gateway,
    config: RunConfig | None = None,
    out_dir: str | Path | None = None,
    service=None,
    templates: TemplateSet | None = None,
    on_progress: ProgressFn | None = None,
    interrupt_after: int | None = None,
):
    """Resume from a checkpoint file or a run directory.

    A provided config must hash-match the checkpointed one (StaleCheckpoint
    otherwise). A completed run returns its result without new gateway calls.
    """
    path = Path(checkpoint)
    if not path.exists():
        raise StaleCheckpoint(f"checkpoint {path} does not exist")
    templates = templates or TemplateSet()

    if path.is_dir():
        generation_state_file = path / "generation_state.json"
        if (path / "phase1").exists() or generation_state_file.exists():
            return _resume_generation(
                path, gateway, config, service, templates, on_progress, interrupt_after
            )
        ckpt = _latest_checkpoint(path / "checkpoints")
        run_dir = path
    else:
        ckpt = path
        run_dir = path.parent.parent
    state = _load_checkpoint(ckpt)

    saved_config = RunConfig.from_json(state["config"])
    if config is not None and config.config_hash() != state["config_hash"]:
        raise StaleCheckpoint("provided config does not match the checkpointed run")
    run_config = config if config is not None else saved_config

    out = Path(out_dir) if out_dir else run_dir
    driver = _LoopDriver(run_config, gateway, templates, out, service, on_progress, interrupt_after)
    dataset = driver.restore(state, run_config.schema)
    if state["completed"]:
        calibrated = (
            best(driver.history).text if driver.history.candidates else run_config.initial_prompt
        )
        return RunResult(
            calibrated_prompt=calibrated,
            history=driver.history,
            stop_reason=driver.stop_reason,
            ledger=gateway.ledger,
            out_dir=out,
            dataset=dataset,
        )
    driver.stop_reason = None
    return run_classification(
        run_config,
        gateway,
        out_dir=out,
        service=service,
        templates=templates,
        on_progress=on_progress,
        interrupt_after=interrupt_after,
        _dataset=dataset,
        _driver=driver,
    )


def _resume_generation(
    run_dir: Path,
    gateway: Gateway,
    config: RunConfig | None,
    service,
    templates: TemplateSet,
    on_progress: ProgressFn | None,
    interrupt_after: int | None,
) -> GenerationResult:
    generation_state_file = run_dir / "generation_state.json"
    if not generation_state_file.exists():
        # Interrupted during phase 1: resume it, then continue into phase 2.
        phase1_dir = run_dir / "phase1"
        ckpt = _latest_checkpoint(phase1_dir / "checkpoints")
        state = _load_checkpoint(ckpt)
        phase1_config = RunConfig.from_json(state["config"])
        driver = _LoopDriver(
            phase1_config, gateway, templates, phase1_dir, service, on_progress, interrupt_after
        )
        dataset = driver.restore(state, phase1_config.schema)
        driver.stop_reason = None if not state["completed"] else driver.stop_reason
        if config is None:
            raise StaleCheckpoint(
                "resuming a generation run interrupted in phase 1 requires the run config"
            )
        phase1 = run_classification(
            phase1_config,
            gateway,
            out_dir=phase1_dir,
            service=service,
            templates=templates,
            on_progress=on_progress,
            interrupt_after=interrupt_after,
            _dataset=dataset,
            _driver=driver,
        )
        ranker_task = phase1_config.task_description
        eval_inputs = _synthesize_eval_inputs(config, gateway, templates)
        ledger_after_phase1 = gateway.ledger.to_json()
        mock_script = gateway.config.mock_script
        state_blob = {
            "ranker_task_description": ranker_task,
            "ranker_prompt": phase1.calibrated_prompt,
            "eval_inputs": eval_inputs,
            "ledger_after_phase1": ledger_after_phase1,
            "mock_cursors": mock_script.cursors() if mock_script else None,
        }
        generation_state_file.write_text(
            json.dumps(state_blob, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        return run_generation(
            config,
            gateway,
            out_dir=run_dir,
            service=service,
            templates=templates,
            on_progress=on_progress,
            interrupt_after=interrupt_after,
            _generation_state=state_blob,
            _phase1_result=phase1,
        )

    with open(generation_state_file, encoding="utf-8") as fh:
        generation_state = json.load(fh)
    phase2_ckpts = run_dir / "phase2" / "checkpoints"
    if config is None:
        raise StaleCheckpoint("resuming a generation run requires the run config")
    phase1_result = RunResult(
        calibrated_prompt=generation_state["ranker_prompt"],
        history=History(),
        stop_reason=StopReason.CONVERGED,
        ledger=gateway.ledger,
        out_dir=run_dir / "phase1",
    )
    if phase2_ckpts.exists() and list(phase2_ckpts.glob("iter_*.json")):
        state = _load_checkpoint(_latest_checkpoint(phase2_ckpts))
        if config.config_hash() != state["config_hash"]:
            raise StaleCheckpoint("provided config does not match the checkpointed run")
        driver = _LoopDriver(
            config, gateway, templates, run_dir / "phase2", service, on_progress, interrupt_after
        )
        driver.restore(state, RankSchema())
        if not state["completed"]:
            driver.stop_reason = None
        return run_generation(
            config,
            gateway,
            out_dir=run_dir,
            service=service,
            templates=templates,
            on_progress=on_progress,
            interrupt_after=interrupt_after,
            _phase2_resume=driver,
            _phase1_result=phase1_result,
            _generation_state=generation_state,
        )
    # Phase 2 not started yet: rewind the gateway to the end of phase 1.
    gateway.ledger.restore(generation_state["ledger_after_phase1"])
    if generation_state.get("mock_cursors") is not None and gateway.config.mock_script is not None:
        gateway.config.mock_script.restore_cursors(generation_state["mock_cursors"])
    return run_generation(
        config,
        gateway,
        out_dir=run_dir,
        service=service,
        templates=templates,
        on_progress=on_progress,
        interrupt_after=interrupt_after,
        _phase1_result=phase1_result,
        _generation_state=generation_state,
    )
