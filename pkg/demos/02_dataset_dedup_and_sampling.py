"""
Semantic deduplication and sampling over the benchmark store
============================================================

The dataset rejects near-duplicates by embedding cosine (default threshold
0.95, exact matches short-circuited) and can pull the real samples closest
to a query centroid, which feeds the style-context section of the sample
generator. The fallback embedder is a hashed character 3-gram bag, so all
of this runs offline and deterministically.
"""

from promptcal import ClassSchema, Dataset, DedupPolicy, cosine, embed_text_fallback

schema = ClassSchema(("Yes", "No"))
ds = Dataset(schema)

# Insert a batch containing an exact duplicate and a near-verbatim variant.
batch = [
    {"text": "the ending twist ruined the whole film for me", "source": "real"},
    {"text": "the ending twist ruined the whole film for me", "source": "real"},   # exact dup
    {"text": "the ending twist ruined the whole film for me!!", "source": "real"},  # near dup
    {"text": "gorgeous cinematography and a patient, quiet script", "source": "real"},
    {"text": "the lead performance carries an otherwise thin plot", "source": "real"},
]
result = ds.insert_records(batch, policy=DedupPolicy(cosine_threshold=0.95))
print("accepted:", len(result.accepted_ids), "rejected:", result.rejected_count)

# The near-duplicate pair really is close in embedding space:
a = embed_text_fallback(batch[0]["text"])
b = embed_text_fallback(batch[2]["text"])
print("cosine(original, near-dup) =", round(cosine(a, b), 4))

# Semantic sampling: which stored real samples sit closest to a query?
picked = ds.semantic_sample(["a movie spoiled by its final twist"], k=2)
for record in picked:
    print("style context:", record.text)

# Class statistics drive the balance analysis of the growing benchmark.
from promptcal import ClassLabel

ds.apply(lambda r: (setattr(r, "annotation", ClassLabel("No")), r)[1])
stats = ds.stats("annotations")
print("per-label counts:", {str(k): v for k, v in stats.per_label_counts.items()})
print("balance ratio:", stats.balance_ratio)
