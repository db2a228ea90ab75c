"""Iterative prompt calibration against synthetic boundary-case benchmarks."""

from .dataset import Dataset, DedupPolicy, DatasetStats, InsertResult, Record
from .errors import PromptCalError
from .estimation import (
    AggregationPolicy,
    AnnotationBatch,
    EstimatorSpec,
    aggregate,
    estimate_batch,
    human_annotate,
    parse_batched_output,
)
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    MeanRankResult,
    ScoreFunction,
    accuracy,
    analyze,
    confusion,
    mean_rank_score,
    select_errors,
)
from .gateway import (
    BackendConfig,
    BudgetDecision,
    BudgetLimits,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    Gateway,
    MockEntry,
    MockScript,
    UsageLedger,
    check_budget,
    cosine,
    embed_text_fallback,
    make_request,
)
from .labels import ClassLabel, ClassSchema, Label, LabelSchema, Rank, RankSchema
from .orchestrator import (
    FeatureToggles,
    GenerationResult,
    History,
    RunConfig,
    RunResult,
    SeedSample,
    StopReason,
    derive_ranking_task,
    resume_run,
    run_classification,
    run_generation,
    run_squash,
    should_stop,
)
from .prompt_opt import PromptCandidate, best, build_prompt_gen_request, parse_new_prompt
from .synthesis import (
    GeneratedSampleSet,
    SynthesisContext,
    build_initial_request,
    build_step_request,
    parse_samples,
    plan_class_quota,
)
from .templates import TemplateSet

__version__ = "0.1.0"
