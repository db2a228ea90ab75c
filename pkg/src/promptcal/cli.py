"""Command-line entry: calibrate, resume, eval, annotate-serve, export."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .annotation_service import AnnotationServer, ServiceState
from .config import LoadedConfig, load_config
from .dataset import Dataset
from .errors import PromptCalError
from .estimation import estimate_batch
from .evaluation import accuracy
from .gateway import Gateway
from .orchestrator import (
    GenerationResult,
    RunResult,
    _predictor_spec,
    resume_run,
    run_classification,
    run_generation,
    run_squash,
)
from .templates import TemplateSet


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="run configuration file (YAML/JSON)")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config value (repeatable, dotted keys allowed)",
        )

    calibrate = sub.add_parser("calibrate", help="run a calibration pipeline")
    add_common(calibrate)
    calibrate.add_argument("--out", required=True, help="artifact output directory")

    resume = sub.add_parser("resume", help="continue a run from its checkpoint")
    resume.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    resume.add_argument("--config", help="run configuration file (hash-checked)")
    resume.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    resume.add_argument("--out", help="artifact output directory (defaults to the run directory)")

    evaluate = sub.add_parser("eval", help="score a prompt over a saved dataset")
    add_common(evaluate)
    evaluate.add_argument("--prompt-file", required=True, help="file holding the prompt text")
    evaluate.add_argument("--dataset", required=True, help="dataset JSONL file")

    serve = sub.add_parser(
        "annotate-serve",
        help="serve the annotation API/UI while a calibration run blocks on it",
    )
    add_common(serve)
    serve.add_argument("--out", required=True, help="artifact output directory")
    serve.add_argument("--port", type=int, help="override the annotation service port")
    serve.add_argument("--ui-dir", help="directory of UI static files to serve")

    export = sub.add_parser("export", help="export a dataset to CSV with class histograms")
    add_common(export)
    export.add_argument("--dataset", required=True, help="dataset JSONL file")
    export.add_argument("--out", required=True, help="CSV output path")
    return parser


def _gateway_for(loaded: LoadedConfig) -> Gateway:
    return Gateway(
        loaded.backend,
        limits=loaded.run.budget,
        rng_seed=loaded.run.rng_seed,
    )


def _print_result(result: RunResult | GenerationResult) -> None:
    if isinstance(result, GenerationResult):
        prompt = result.calibrated_generation_prompt
    else:
        prompt = result.calibrated_prompt
    print(f"stop_reason={result.stop_reason.value}")
    print("final prompt:")
    print(prompt)


def _run_pipeline(loaded: LoadedConfig, gateway: Gateway, out: str, service=None) -> int:
    templates = TemplateSet(loaded.template_dir)
    kwargs = dict(
        out_dir=out,
        service=service,
        templates=templates,
        on_progress=print,
    )
    if loaded.run.mode == "generate":
        result = run_generation(loaded.run, gateway, **kwargs)
    elif loaded.run.mode == "squash":
        result = run_squash(loaded.run, gateway, **kwargs)
    else:
        result = run_classification(loaded.run, gateway, **kwargs)
    _print_result(result)
    return 0


def _cmd_calibrate(args) -> int:
    loaded = load_config(args.config, args.overrides)
    return _run_pipeline(loaded, _gateway_for(loaded), args.out)


def _cmd_resume(args) -> int:
    config = None
    loaded = None
    if args.config:
        loaded = load_config(args.config, args.overrides)
        config = loaded.run
    if loaded is None:
        raise PromptCalError("resume requires --config to rebuild the backend")
    gateway = _gateway_for(loaded)
    templates = TemplateSet(loaded.template_dir)
    result = resume_run(
        args.checkpoint,
        gateway,
        config=config,
        out_dir=args.out,
        templates=templates,
        on_progress=print,
    )
    _print_result(result)
    return 0


def _cmd_eval(args) -> int:
    loaded = load_config(args.config, args.overrides)
    gateway = _gateway_for(loaded)
    templates = TemplateSet(loaded.template_dir)
    prompt = Path(args.prompt_file).read_text(encoding="utf-8").strip()
    dataset = Dataset.load(args.dataset, loaded.run.schema, embedder=gateway.embed)
    annotated = [r for r in dataset if r.annotation is not None]
    if not annotated:
        print("accuracy=0.0000 n=0")
        return 0
    spec = _predictor_spec(loaded.run, prompt)
    labels = estimate_batch(spec, annotated, gateway=gateway, templates=templates)
    dataset.set_labels(labels, spec.record_field)
    scored = [r for r in dataset if r.annotation is not None and r.prediction is not None]
    score = accuracy(scored, rank_tolerance=loaded.run.rank_tolerance)
    print(f"accuracy={score:.4f} n={len(scored)}")
    return 0


def _cmd_annotate_serve(args) -> int:
    loaded = load_config(args.config, args.overrides)
    settings = loaded.annotation
    auth_token = None
    if settings.auth_token_env:
        auth_token = os.environ.get(settings.auth_token_env) or None
    ui_dir = args.ui_dir or settings.ui_dir
    if ui_dir is None:
        default_ui = Path.cwd() / "frontend" / "dist"
        ui_dir = str(default_ui) if default_ui.is_dir() else None
    state = ServiceState(journal_path=settings.journal)
    server = AnnotationServer(
        state,
        port=args.port if args.port is not None else settings.port,
        static_dir=ui_dir,
        auth_token=auth_token,
    )
    server.start()
    print(f"annotation service listening on {server.base_url}")
    try:
        return _run_pipeline(loaded, _gateway_for(loaded), args.out, service=state)
    finally:
        server.stop()


def _cmd_export(args) -> int:
    loaded = load_config(args.config, args.overrides)
    dataset = Dataset.load(args.dataset, loaded.run.schema)
    dataset.export_csv(args.out)
    stats = dataset.stats("annotations")
    synthetic_sources = ("synthetic", "generated_output")
    for label, count in stats.per_label_counts.items():
        real = sum(
            1
            for r in dataset
            if r.annotation == label and r.source not in synthetic_sources
        )
        synthetic = count - real
        print(f"label={label} annotations={count} real={real} synthetic={synthetic}")
    print(f"balance_ratio={stats.balance_ratio:.4f} total={stats.total}")
    print(f"csv written to {args.out}")
    return 0


_COMMANDS = {
    "calibrate": _cmd_calibrate,
    "resume": _cmd_resume,
    "eval": _cmd_eval,
    "annotate-serve": _cmd_annotate_serve,
    "export": _cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except PromptCalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
