"""Demo 5 — the chat service: sessions, retrieval, journal, replay.

Drives the chat engine the HTTP layer wraps: create a user with persona
attributes, chat across turns (retrieval picks the persona subset from recent
user turns), force a label, mutate the persona pool mid-conversation, and
finally rebuild the whole engine from its append-only journal and show the
state survives a restart.

Run:  python3 demos/05_service.py   (about a minute on CPU)
"""

import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from _common import banner, micro_checkpoint

from wwh_dialogue.model import DecodeConfig
from wwh_dialogue.service import ChatEngine, JournalStore

banner("Boot")
ckpt, _ = micro_checkpoint(epochs=12)
journal_path = Path(tempfile.mkdtemp()) / "journal.jsonl"
engine = ChatEngine(ckpt, store=JournalStore(journal_path),
                    decode=DecodeConfig(max_new_tokens=14), top_k=3)
print(f"engine up; journal at {journal_path}")

banner("Personas + a conversation")
for text in ("my sport is tennis", "my drink is coffee", "my hobby is painting"):
    attr = engine.add_persona("u-demo", text)
    print(f"  added {attr.id}: {attr.text}")
session_id = engine.create_session("u-demo")

for message, force in (("i was thinking about tennis again today", None),
                       ("tell me something nice", "CRTL")):
    turn = engine.post_message(session_id, message, force_rtl=force)
    forced = f" (forced {force})" if force else ""
    print(f"\n  user : {message}")
    print(f"  agent [{turn.rtl}]{forced}: {turn.response}")
    print(f"    retrieved: {[(r.attribute.id, round(r.score, 3)) for r in turn.retrieved]}")
    print(f"    diagnostics: f1={turn.f1:.3f} p_cover={turn.cover:.3f} grounding={turn.grounding.level}")

banner("Pool mutation changes the next retrieval")
engine.delete_persona("u-demo", "p000")
turn = engine.post_message(session_id, "any thoughts on tennis or coffee")
print(f"  after deleting p000 (tennis), retrieval ranks: "
      f"{[(r.attribute.id, round(r.score, 3)) for r in turn.retrieved]}")

banner("Restart from the journal")
engine2 = ChatEngine(ckpt, store=JournalStore(journal_path),
                     decode=DecodeConfig(max_new_tokens=14), top_k=3)
log1 = engine.session_log(session_id)
log2 = engine2.session_log(session_id)
print(f"  replayed log matches live engine: {log1 == log2}")
print(f"  exchanges persisted: {len(log2)}")
print("\n`wwh serve --ckpt ... --store ...` exposes exactly this engine over")
print("HTTP at /v1 (and the sanity UI at /ui); `wwh chat` is the same loop")
print("in a terminal REPL.")
