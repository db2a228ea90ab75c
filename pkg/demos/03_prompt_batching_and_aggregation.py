"""
Prompt batching and the batch estimator's aggregation layer
===========================================================

Estimation packs several samples into one request (cutting cost) and can
fuse multiple estimators through an aggregation rule. Here two scripted
moderation rules are fused with any_positive: a sample is flagged when
either rule flags it, which is the ground truth a squashing run calibrates
a single prompt against.
"""

from promptcal import (
    AggregationPolicy,
    BackendConfig,
    ClassLabel,
    ClassSchema,
    EstimatorSpec,
    Gateway,
    MockEntry,
    MockScript,
    Record,
    estimate_batch,
)

schema = ClassSchema(("Yes", "No"))
records = [
    Record(id=0, text="scene with graphic gore effects"),
    Record(id=1, text="dialogue packed with strong cursing"),
    Record(id=2, text="calm family picnic conversation"),
    Record(id=3, text="gore and cursing in one scene"),
]

def rule(marker, predicate):
    labels = ["Yes" if predicate(r.text) else "No" for r in records]
    answer = "\n".join(f"{i}: {l}" for i, l in enumerate(labels, start=1))
    return MockEntry("annotator", [answer], match_substring=marker)

script = MockScript(
    [
        rule("RULE-A", lambda t: "gore" in t),
        rule("RULE-B", lambda t: "cursing" in t),
    ]
)
gateway = Gateway(BackendConfig(kind="mock", mock_script=script))

member = lambda marker: EstimatorSpec(
    kind="llm",
    role="annotator",
    label_schema=schema,
    prompt_text=f"{marker} moderation rule",
    task_description="moderation",
    prompt_batch_size=4,  # all four samples travel in one request
)

fused = EstimatorSpec(
    kind="batch_aggregate",
    role="annotator",
    label_schema=schema,
    members=[member("RULE-A"), member("RULE-B")],
    aggregation=AggregationPolicy("any_positive", ClassLabel("Yes")),
)

labels = estimate_batch(fused, records, gateway=gateway)
for record in records:
    print(f"{labels[record.id]}: {record.text}")

# Two members, one request each: prompt batching kept the bill at 2 calls.
print("requests sent:", gateway.ledger.breakdown["annotator"].requests)
