"""Demo 2 — exact blending and negative persona augmentation.

Shows how instance pools are apportioned under rational-arithmetic weights
(the resolved sizes always sum to the combined pool), then how each turn kind
gets its persona subset: positives plus drawn negatives for personalized
turns, all-irrelevant subsets for non-personalized turns, and nothing for
casual chat. Ends with the serialized token stream the model actually trains
on.

Run:  python3 demos/02_blend_augment.py
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from _common import banner, micro_corpus

from wwh_dialogue.augmentation import AugmentConfig, augment_instance
from wwh_dialogue.blending import MSPD_NPR, MSPD_PR, BlendSpec, materialize, resolve_plan, split_mspd
from wwh_dialogue.pipeline import assemble_instances, build_data_context
from wwh_dialogue.vocab import build_vocab

mspd, casual = micro_corpus()
data = build_data_context(mspd, {"daily": casual})

banner("Instance pools")
pr_refs, npr_refs = split_mspd(mspd)
print(f"personalized (PR) agent turns:      {len(pr_refs)}")
print(f"non-personalized (NPR) agent turns: {len(npr_refs)}")

banner("Weighted apportionment is exact")
spec = BlendSpec.build([
    ("daily", "0.85", 60),
    (MSPD_PR, "0.7", len(pr_refs)),
    (MSPD_NPR, "0.8", len(npr_refs)),
])
plan = resolve_plan(spec)
for entry in plan.entries:
    print(f"  {entry.dataset_id:10s} available={entry.available:3d}  target={entry.target:3d}  ({entry.mode})")
print(f"  targets sum to {sum(e.target for e in plan.entries)} == combined pool {plan.total}")
assert sum(e.target for e in plan.entries) == plan.total

banner("Materialization is seeded and size-exact")
sampled = materialize(plan, {"daily": [f"c{i}" for i in range(60)],
                             MSPD_PR: pr_refs, MSPD_NPR: npr_refs}, rng_seed=7)
print(f"  drew {len(sampled)} instance refs; same seed -> same order: "
      f"{sampled[:2] == materialize(plan, {'daily': [f'c{i}' for i in range(60)], MSPD_PR: pr_refs, MSPD_NPR: npr_refs}, rng_seed=7)[:2]}")

banner("Persona subsets per turn kind (k=5)")
cfg = AugmentConfig(k=5, rng_seed=0)
episode_by_user = {ep.user_id: ep for ep in mspd}
pr_ref = pr_refs[0]
npr_ref = npr_refs[0]
for label, ref in (("PR ", pr_ref), ("NPR", npr_ref)):
    ep = episode_by_user[ref.episode_id]
    subset = augment_instance(ref, ep, False, cfg, foreign=data.foreign, lexicon=data.lexicon)
    print(f"  {label} turn {ref.episode_id}/s{ref.session_index}t{ref.turn_index}: kind={subset.kind}, |subset|={len(subset.attributes)}")
    for attr in subset.attributes:
        role = "POSITIVE" if attr.id in subset.positive_ids else "negative"
        print(f"      [{role}] {attr.text}")

banner("Serialized training instance")
vocab = build_vocab([mspd, casual])
inst = assemble_instances([pr_ref], data, cfg, vocab)[0]
tokens = [vocab.token(i) for i in inst.input_ids]
print("  " + " ".join(tokens[:40]) + (" ..." if len(tokens) > 40 else ""))
masked = sum(inst.loss_mask)
print(f"  {len(tokens)} tokens; loss on final {masked} (the agent label + response + <EOS>)")
print(f"  gold label for this turn: {inst.rtl}")
