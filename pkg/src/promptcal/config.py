"""Declarative run configuration: YAML/JSON files plus key=value overrides.

The file mirrors RunConfig field names; unknown keys and invariant violations
fail with the offending field named. API keys are taken from environment
variables only, never from the file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .estimation import AggregationPolicy, EstimatorSpec
from .gateway import BackendConfig, BudgetLimits, MockScript
from .labels import ClassSchema, Label, LabelSchema, RankSchema, label_from_json
from .orchestrator import FeatureToggles, RunConfig, SeedSample

_TOP_LEVEL_KEYS = {
    "mode",
    "task_description",
    "initial_prompt",
    "labels",
    "rank_scale",
    "seed_samples",
    "annotator",
    "predictor",
    "backend",
    "max_iterations",
    "patience",
    "min_delta",
    "budget",
    "samples_per_iteration",
    "rng_seed",
    "features",
    "boundary_targets",
    "style_context_size",
    "history_window",
    "synthesis_history_window",
    "synthesis_errors_per_prompt",
    "max_errors_per_class",
    "dedup_threshold",
    "eval_input_count",
    "rank_tolerance",
    "annotation",
    "template_dir",
}

_ESTIMATOR_KEYS = {
    "kind",
    "role",
    "prompt_text",
    "model_id",
    "temperature",
    "max_tokens",
    "prompt_batch_size",
    "parallelism",
    "members",
    "aggregation",
}

_BACKEND_KEYS = {
    "kind",
    "endpoint_url",
    "api_key_env",
    "timeout",
    "max_retries",
    "retry_backoff",
    "max_concurrent_requests",
    "requests_per_minute",
    "embedding_model",
    "cost_table",
    "mock_script",
    "strict",
    "default_response",
}

_ANNOTATION_KEYS = {"port", "journal", "poll_interval", "auth_token_env", "ui_dir"}


@dataclass
class AnnotationSettings:
    port: int = 8765
    journal: str | None = None
    poll_interval: float = 2.0
    auth_token_env: str | None = None
    ui_dir: str | None = None


@dataclass
class LoadedConfig:
    run: RunConfig
    backend: BackendConfig
    annotation: AnnotationSettings
    template_dir: str | None = None


def _fail(field: str, message: str) -> ConfigError:
    return ConfigError(f"{field}: {message}")


def _require_str(raw: dict, field: str) -> str:
    value = raw.get(field)
    if not isinstance(value, str) or not value.strip():
        raise _fail(field, "required non-empty string")
    return value


def _label_value(value, schema: LabelSchema, field: str) -> Label:
    if isinstance(value, bool):
        raise _fail(field, "YAML parsed this label as a boolean; quote values like 'Yes'/'No'")
    try:
        label = label_from_json(value, schema)
    except ValueError as exc:
        raise _fail(field, str(exc)) from exc
    if label is None:
        raise _fail(field, "label must not be null")
    return label


def _parse_schema(raw: dict, mode: str) -> LabelSchema:
    labels = raw.get("labels")
    rank_scale = raw.get("rank_scale")
    if labels is not None and rank_scale:
        raise _fail("labels", "give either labels or rank_scale, not both")
    if labels is not None:
        if not isinstance(labels, list) or not labels:
            raise _fail("labels", "must be a non-empty list")
        for item in labels:
            if isinstance(item, bool) or not isinstance(item, str):
                raise _fail("labels", "labels must be strings; quote values like 'Yes'/'No'")
        return ClassSchema(tuple(labels))
    if rank_scale or mode == "generate":
        if isinstance(rank_scale, dict):
            return RankSchema(int(rank_scale.get("lo", 1)), int(rank_scale.get("hi", 5)))
        return RankSchema()
    raise _fail("labels", "classification runs need a declared label set")


def _parse_estimator(raw, schema: LabelSchema, task_description: str, field: str) -> EstimatorSpec:
    if not isinstance(raw, dict):
        raise _fail(field, "must be a mapping")
    unknown = set(raw) - _ESTIMATOR_KEYS
    if unknown:
        raise _fail(field, f"unknown keys {sorted(unknown)}")
    kind = raw.get("kind", "llm")
    aggregation = None
    if raw.get("aggregation") is not None:
        agg = raw["aggregation"]
        positive = agg.get("positive_label")
        aggregation = AggregationPolicy(
            rule=agg.get("rule", "any_positive"),
            positive_label=(
                _label_value(positive, schema, f"{field}.aggregation.positive_label")
                if positive is not None
                else None
            ),
        )
    try:
        return EstimatorSpec(
            kind=kind,
            role=raw.get("role", "annotator"),
            label_schema=schema,
            prompt_text=raw.get("prompt_text", ""),
            task_description=task_description,
            model_id=raw.get("model_id", "mock-model"),
            temperature=raw.get("temperature"),
            max_tokens=int(raw.get("max_tokens", 1024)),
            prompt_batch_size=int(raw.get("prompt_batch_size", 5)),
            parallelism=int(raw.get("parallelism", 1)),
            members=[
                _parse_estimator(m, schema, task_description, f"{field}.members[{i}]")
                for i, m in enumerate(raw.get("members", []))
            ],
            aggregation=aggregation,
        )
    except ConfigError as exc:
        raise _fail(field, str(exc)) from exc


def _parse_backend(raw, config_dir: Path) -> BackendConfig:
    raw = raw or {"kind": "mock"}
    if not isinstance(raw, dict):
        raise _fail("backend", "must be a mapping")
    unknown = set(raw) - _BACKEND_KEYS
    if unknown:
        raise _fail("backend", f"unknown keys {sorted(unknown)}")
    kind = raw.get("kind", "mock")
    mock_script = None
    if kind == "mock":
        script_path = raw.get("mock_script")
        if not script_path:
            raise _fail("backend.mock_script", "mock backend requires a script file")
        path = Path(script_path)
        if not path.is_absolute():
            path = config_dir / path
        mock_script = MockScript.load(
            path,
            strict=bool(raw.get("strict", True)),
            default_response=raw.get("default_response", ""),
        )
    cost_table = {}
    for model, prices in (raw.get("cost_table") or {}).items():
        if not isinstance(prices, (list, tuple)) or len(prices) != 2:
            raise _fail("backend.cost_table", f"{model}: need [prompt_price, completion_price]")
        cost_table[model] = (float(prices[0]), float(prices[1]))
    try:
        return BackendConfig(
            kind=kind,
            endpoint_url=raw.get("endpoint_url"),
            api_key_env=raw.get("api_key_env"),
            timeout=float(raw.get("timeout", 60.0)),
            max_retries=int(raw.get("max_retries", 3)),
            retry_backoff=tuple(raw.get("retry_backoff", (1.0, 2.0, 4.0))),
            max_concurrent_requests=int(raw.get("max_concurrent_requests", 8)),
            requests_per_minute=raw.get("requests_per_minute"),
            embedding_model=raw.get("embedding_model"),
            cost_table=cost_table,
            mock_script=mock_script,
        )
    except ValueError as exc:
        raise _fail("backend", str(exc)) from exc


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.key=value` overrides; values parse as YAML scalars."""
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"override {override!r} is not of the form key=value")
        key, value = override.split("=", 1)
        parts = key.strip().split(".")
        target = raw
        for part in parts[:-1]:
            node = target.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} crosses a non-mapping value")
            target = node
        target[parts[-1]] = yaml.safe_load(value)
    return raw


def parse_config_dict(raw: dict, config_dir: Path) -> LoadedConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")

    mode = raw.get("mode", "classify")
    task_description = _require_str(raw, "task_description")
    initial_prompt = _require_str(raw, "initial_prompt")
    schema = _parse_schema(raw, mode)

    seeds = []
    for i, item in enumerate(raw.get("seed_samples") or []):
        if isinstance(item, str):
            seeds.append(SeedSample(text=item))
            continue
        if not isinstance(item, dict) or "text" not in item:
            raise _fail(f"seed_samples[{i}]", "need a string or a mapping with 'text'")
        annotation = item.get("annotation")
        seeds.append(
            SeedSample(
                text=item["text"],
                annotation=(
                    _label_value(annotation, schema, f"seed_samples[{i}].annotation")
                    if annotation is not None
                    else None
                ),
            )
        )

    annotator_raw = raw.get("annotator")
    if annotator_raw is None:
        raise _fail("annotator", "an annotator estimator is required")
    annotator = _parse_estimator(annotator_raw, schema, task_description, "annotator")

    predictor = raw.get("predictor") or {}
    if not isinstance(predictor, dict):
        raise _fail("predictor", "must be a mapping")
    unknown = set(predictor) - {"model_id", "prompt_batch_size", "parallelism"}
    if unknown:
        raise _fail("predictor", f"unknown keys {sorted(unknown)}")

    budget_raw = raw.get("budget") or {}
    budget = BudgetLimits(
        max_cost=budget_raw.get("max_cost"),
        max_tokens=budget_raw.get("max_tokens"),
    )

    features_raw = raw.get("features") or {}
    unknown = set(features_raw) - {"iterative_generation", "synthetic_data", "analyzer"}
    if unknown:
        raise _fail("features", f"unknown keys {sorted(unknown)}")
    features = FeatureToggles(
        iterative_generation=bool(features_raw.get("iterative_generation", True)),
        synthetic_data=bool(features_raw.get("synthetic_data", True)),
        analyzer=bool(features_raw.get("analyzer", True)),
    )

    boundary_targets = None
    if raw.get("boundary_targets"):
        boundary_targets = [
            _label_value(v, schema, f"boundary_targets[{i}]")
            for i, v in enumerate(raw["boundary_targets"])
        ]

    max_iterations = raw.get("max_iterations")
    if max_iterations is None:
        max_iterations = 30 if mode == "generate" else 50

    annotation_raw = raw.get("annotation") or {}
    unknown = set(annotation_raw) - _ANNOTATION_KEYS
    if unknown:
        raise _fail("annotation", f"unknown keys {sorted(unknown)}")
    annotation = AnnotationSettings(
        port=int(annotation_raw.get("port", 8765)),
        journal=annotation_raw.get("journal"),
        poll_interval=float(annotation_raw.get("poll_interval", 2.0)),
        auth_token_env=annotation_raw.get("auth_token_env"),
        ui_dir=annotation_raw.get("ui_dir"),
    )

    run = RunConfig(
        mode=mode,
        task_description=task_description,
        initial_prompt=initial_prompt,
        schema=schema,
        annotator=annotator,
        seed_samples=seeds,
        predictor_model=predictor.get("model_id", "mock-model"),
        prompt_batch_size=int(predictor.get("prompt_batch_size", 5)),
        parallelism=int(predictor.get("parallelism", 1)),
        max_iterations=int(max_iterations),
        patience=int(raw.get("patience", 5)),
        min_delta=float(raw.get("min_delta", 0.0)),
        budget=budget,
        samples_per_iteration=int(raw.get("samples_per_iteration", 10)),
        rng_seed=int(raw.get("rng_seed", 0)),
        features=features,
        boundary_targets=boundary_targets,
        style_context_size=int(raw.get("style_context_size", 5)),
        history_window=int(raw.get("history_window", 7)),
        synthesis_history_window=int(raw.get("synthesis_history_window", 3)),
        synthesis_errors_per_prompt=int(raw.get("synthesis_errors_per_prompt", 3)),
        max_errors_per_class=int(raw.get("max_errors_per_class", 10)),
        dedup_threshold=float(raw.get("dedup_threshold", 0.95)),
        eval_input_count=int(raw.get("eval_input_count", 10)),
        rank_tolerance=int(raw.get("rank_tolerance", 0)),
        annotation_poll_interval=annotation.poll_interval,
    )
    try:
        run.validate()
    except ConfigError:
        raise
    backend = _parse_backend(raw.get("backend"), config_dir)
    return LoadedConfig(
        run=run,
        backend=backend,
        annotation=annotation,
        template_dir=raw.get("template_dir"),
    )


def load_config(path: str | Path, overrides: list[str] | None = None) -> LoadedConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    raw = apply_overrides(raw, overrides or [])
    return parse_config_dict(raw, path.resolve().parent)
