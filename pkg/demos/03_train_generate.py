"""Demo 3 — training the tiny model and steering the WHEN decision.

Trains a micro model for a few epochs, then decodes the same held-out context
three ways: free (the model emits its own response-type label), forced
personalized, and forced casual. Forcing injects the label token before the
response, so the label is honored by construction and the response style
follows it.

Run:  python3 demos/03_train_generate.py   (about a minute on CPU)
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from _common import banner, micro_checkpoint

from wwh_dialogue.corpus import CRTL, PRTL, USER
from wwh_dialogue.model import DecodeConfig
from wwh_dialogue.model.generate import generate

banner("Training")
print("micro corpus, d_model=32, 2 layers; watch the loss fall:")
ckpt, eval_eps = micro_checkpoint(epochs=12, quiet=False)
print(f"trained {ckpt.step} steps; final loss {ckpt.meta['final_loss']:.3f}")

banner("A held-out context")
ep = eval_eps[0]
session = ep.sessions[0]
agent_turn_idx = next(i for i, t in enumerate(session.turns) if t.rtl == PRTL)
context = list(session.turns[:agent_turn_idx])
gold = session.turns[agent_turn_idx]
subset = tuple(a.text for a in ep.persona_pool[:5])
for turn in context[-3:]:
    print(f"  {turn.speaker}: {turn.text}")
print(f"  gold agent turn [label {gold.rtl}]: {gold.text}")

banner("Free decode — the model chooses the label")
decode = DecodeConfig(max_new_tokens=16)
result = generate(ckpt.params64(), ckpt.config, ckpt.vocab, ep.demographics,
                  subset, context, decode=decode)
print(f"  emitted label: {result.rtl}")
print(f"  response     : {result.text!r}")

banner("Forced labels — WHEN under external control")
for label in (PRTL, CRTL):
    result = generate(ckpt.params64(), ckpt.config, ckpt.vocab, ep.demographics,
                      subset, context, force_rtl=label, decode=decode)
    assert result.rtl == label
    print(f"  force {label}: {result.text!r}")
print("forcing always wins the label slot; `wwh chat` exposes the same switch")
print("as /force, and the HTTP API as the force_rtl field.")
