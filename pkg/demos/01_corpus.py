"""Demo 1 — the annotated corpus.

Generates a small synthetic multi-session corpus, walks through one episode's
structure (persona pool, sessions, per-turn labels and grounding), validates
every schema invariant, and prints corpus statistics.

Run:  python3 demos/01_corpus.py
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from _common import banner, micro_corpus

from wwh_dialogue import corpus_stats, validate_episode

mspd, casual = micro_corpus()

banner("One episode, end to end")
ep = mspd[0]
print(f"user_id={ep.user_id}  demographics=({ep.demographics.gender}, {ep.demographics.age_band})")
print(f"persona pool ({len(ep.persona_pool)} attributes):")
for attr in ep.persona_pool:
    intro = f"  (introduced at session {attr.source_turn[0]})" if attr.source_turn else ""
    print(f"  {attr.id}: {attr.text}{intro}")

print(f"\n{len(ep.sessions)} sessions; session 0 transcript:")
for turn in ep.sessions[0].turns:
    tag = f" [{turn.rtl}]" if turn.rtl else ""
    grounded = f"  <- grounds {turn.grounded_persona_ids}" if turn.grounded_persona_ids else ""
    print(f"  {turn.speaker:5s}{tag}: {turn.text}{grounded}")

banner("Labels carry the WHEN decision")
print("Agent turns are labeled PRTL (personalized) or CRTL (casual); a PRTL")
print("turn names the persona attributes its text grounds. Casual corpora")
print("(small talk, knowledge chat) carry CRTL agent turns and empty pools:")
print(f"  casual episode 0, turn 1: {casual[0].sessions[0].turns[1].speaker}"
      f" [{casual[0].sessions[0].turns[1].rtl}] {casual[0].sessions[0].turns[1].text!r}")

banner("Schema validation")
violations = [v for e in mspd + casual for v in validate_episode(e)]
print(f"violations across {len(mspd) + len(casual)} episodes: {len(violations)}")
assert not violations

banner("Corpus statistics")
stats = corpus_stats(mspd)
print(f"episodes={stats.n_episodes}  sessions={stats.n_sessions}  utterances={stats.n_utterances}")
print(f"avg turns/session={stats.avg_turns_per_session:.2f}")
print(f"(the `wwh corpus stats` subcommand prints the same numbers for a corpus file)")
