"""Demo 4 — the evaluation suite.

Evaluates a freshly trained micro model on held-out sessions: perplexity,
label accuracy, grounding buckets from free-decoded responses, and the two
lexical grounding metrics (content-word F1, IDF-weighted persona coverage).
Also shows the single-response metric calls the report aggregates.

Run:  python3 demos/04_evaluate.py   (about a minute on CPU)
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from _common import banner, micro_checkpoint

from wwh_dialogue.augmentation import AugmentConfig
from wwh_dialogue.evaluation import (
    build_idf_table,
    classify_grounding,
    evaluate_checkpoint,
    p_cover,
    persona_f1,
)
from wwh_dialogue.pipeline import assemble_instances, build_data_context, labeled_refs

banner("Train + held-out instances")
ckpt, eval_eps = micro_checkpoint(epochs=12)
eval_data = build_data_context(eval_eps, {})
instances = assemble_instances(labeled_refs(eval_eps), eval_data,
                               AugmentConfig(k=5, rng_seed=0), ckpt.vocab)
print(f"{len(instances)} held-out labeled instances from {len(eval_eps)} later sessions")

banner("Single-response metrics")
response = "since your food is pizza you might enjoy this"
subset = ("as for my food it is pizza", "my sport is tennis")
idf = build_idf_table(subset)
print(f"  response: {response!r}")
print(f"  subset  : {subset}")
print(f"  persona_f1 = {persona_f1(response, subset):.3f}   (content-word overlap with the subset union)")
print(f"  p_cover    = {p_cover(response, subset, idf):.3f}   (best IDF-weighted coverage of one attribute)")
judgment = classify_grounding(response, [("p0", subset[0]), ("p1", subset[1])], "PRTL")
print(f"  grounding  = {judgment.level} (similarity {judgment.similarity:.2f} vs {judgment.matched_persona_id})")

banner("Checkpoint report")
report = evaluate_checkpoint(ckpt, instances, build_idf_table(
    tuple(a.text for ep in eval_eps for a in ep.persona_pool)), max_new_tokens=16)
accuracy = ", ".join(f"{k} {v:.2f}" for k, v in report.rtl_accuracy.items())
print(f"  perplexity      : {report.ppl:.3f}")
print(f"  label accuracy  : {accuracy}")
print(f"  corpus F1       : {report.f1:.4f}")
print(f"  corpus P-Cover  : {report.p_cover:.4f}")
print(f"  grounding mix   : {report.grounding_counts}")
print("\nNumbers at this micro scale are illustrative; the `wwh sweep` presets")
print("train the configuration that exhibits the trend-level differences.")
print("`wwh eval --ckpt ... --data ...` writes the same report as JSON.")
