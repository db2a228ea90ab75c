"""
A complete calibration loop on a scripted mock backend
=======================================================

The engine iterates: generate challenging samples, annotate them with the
ground-truth estimator, predict with the current prompt, evaluate, and ask
the prompt generator for something better. Here every model answer is
scripted, so the whole loop runs offline in milliseconds and is fully
deterministic.

The hidden ground truth: a review "contains a spoiler" iff it mentions a
twist. Scripted proposals improve prediction quality 0.6 -> 0.75 -> 0.9.
"""

from promptcal import (
    BackendConfig,
    EstimatorSpec,
    Gateway,
    MockEntry,
    MockScript,
    ClassSchema,
    RunConfig,
    run_classification,
)

schema = ClassSchema(("Yes", "No"))

# Ten synthetic samples per iteration; even indices mention a twist.
def sample(it, j):
    body = " ".join(f"demo{it}x{j}w{k}" for k in range(6))
    return f"{body} twist reveal" if j % 2 == 0 else f"{body} craft notes"

def gt(text):
    return "Yes" if "twist" in text else "No"

def answers(labels):
    return "\n".join(f"{i}: {label}" for i, label in enumerate(labels, start=1))

texts = [[sample(it, j) for j in range(10)] for it in range(5)]
pools = [sum(texts[: it + 1], []) for it in range(5)]

# Scripted predictions: flip the first k ground-truth labels to hit the
# desired accuracy on the growing benchmark (10, 20, ... records).
flips = [4, 5, 3, 4, 5]  # -> accuracies 0.6, 0.75, 0.9, 0.9, 0.9
predictions = []
for it, pool in enumerate(pools):
    labels = [gt(t) for t in pool]
    flipped = ["No" if l == "Yes" else "Yes" for l in labels[: flips[it]]] + labels[flips[it]:]
    predictions.append(answers(flipped))

script = MockScript(
    [
        MockEntry("sample_gen", ["\n".join(f"{j+1}. {t}" for j, t in enumerate(b)) for b in texts]),
        MockEntry("annotator", [answers([gt(t) for t in b]) for b in texts]),
        MockEntry("predictor", predictions),
        MockEntry("analyzer", ["the prompt misses implicit twist hints"], cyclic=True),
        MockEntry(
            "prompt_gen",
            [f"```\nprompt P{i} sharpen the twist boundary\n```" for i in range(1, 5)],
        ),
    ]
)

gateway = Gateway(BackendConfig(kind="mock", mock_script=script))

config = RunConfig(
    mode="classify",
    task_description="flag reviews that spoil the plot twist",
    initial_prompt="prompt P0 does the review spoil the plot?",
    schema=schema,
    annotator=EstimatorSpec(
        kind="llm",
        role="annotator",
        label_schema=schema,
        prompt_text="GT-ANNOTATOR apply the hidden twist rule",
        task_description="decide the true label",
        prompt_batch_size=500,
    ),
    prompt_batch_size=500,
    samples_per_iteration=10,
    patience=2,
)

result = run_classification(config, gateway, on_progress=print)

print()
print("stop reason:", result.stop_reason.value)
print("scores:", [round(s, 4) for s in result.history.scores()])
print("calibrated prompt:", result.calibrated_prompt)
print("tokens spent:", gateway.ledger.total_tokens())
