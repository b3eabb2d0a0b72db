"""Service correctness: journal durability, session consistency under
failure, bit-exact replay, diagnostics recomputation, and the /v1 HTTP API."""

import importlib
import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from wwh_dialogue.corpus import CRTL, PRTL, USER, AGENT
from wwh_dialogue.evaluation import classify_grounding, p_cover, persona_f1
from wwh_dialogue.model import Checkpoint, ModelConfig, cast_params, init_params
from wwh_dialogue.service import (
    BadRequest,
    ChatEngine,
    GenerationFailed,
    JournalStore,
    StoreError,
    UnknownAttribute,
    UnknownSession,
    UnknownUser,
)
from wwh_dialogue.service.app import build_app
from wwh_dialogue.syngen import GeneratorConfig, generate_mspd
from wwh_dialogue.vocab import build_vocab

from .oracles.retrieval_oracle import oracle_scores

_EPISODES = generate_mspd(GeneratorConfig(n_episodes=3, seed=55))
_VOCAB = build_vocab([_EPISODES])
_CFG = ModelConfig(
    vocab_size=len(_VOCAB), n_layers=1, d_model=16, n_heads=2, max_seq_len=256, dropout=0.0, seed=9
)
_PARAMS = cast_params(init_params(_CFG), np.float64)


def _checkpoint(rtl_mode=True):
    return Checkpoint(
        params=_PARAMS, config=_CFG, vocab=_VOCAB, step=0, rtl_mode=rtl_mode, meta={}
    )


def _engine(tmp_path=None, **kw):
    store = JournalStore(tmp_path / "journal.jsonl") if tmp_path is not None else None
    return ChatEngine(_checkpoint(), store=store, **kw)


# ---------------------------------------------------------------------------
# Journal store


def test_store_roundtrip_preserves_records(tmp_path):
    store = JournalStore(tmp_path / "j.jsonl")
    records = [{"record": "a", "n": 1}, {"record": "b", "deep": {"x": [1, 2]}}]
    for rec in records:
        store.append(rec)
    assert store.records() == records


def test_store_tolerates_torn_tail(tmp_path):
    path = tmp_path / "j.jsonl"
    store = JournalStore(path)
    store.append({"record": "ok", "i": 0})
    store.close()
    with open(path, "a", encoding="utf-8") as fh:
        fh.write('{"record": "torn", "i": 1')  # interrupted append: no newline
    reopened = JournalStore(path)
    assert reopened.records() == [{"record": "ok", "i": 0}]


def test_store_rejects_midfile_corruption(tmp_path):
    path = tmp_path / "j.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write('{"record": "ok"}\n')
        fh.write("NOT JSON\n")
        fh.write('{"record": "later"}\n')
    with pytest.raises(StoreError, match="line 2"):
        JournalStore(path).records()


def test_store_skips_blank_lines_and_non_object_rejected(tmp_path):
    path = tmp_path / "j.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write('{"record": "ok"}\n\n\n{"record": "two"}\n')
    assert len(JournalStore(path).records()) == 2
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("[1, 2]\n")
    with pytest.raises(StoreError, match="not an object"):
        JournalStore(path).records()


# ---------------------------------------------------------------------------
# Engine: sessions, turns, bookkeeping


def test_two_posts_grow_context_by_four_turns():
    engine = _engine()
    sid = engine.create_session("u1")
    engine.post_message(sid, "hello there friend")
    engine.post_message(sid, "how are you'd say")
    state = engine._session(sid)
    assert len(state.turns) == 4
    assert [t.speaker for t in state.turns] == [USER, AGENT, USER, AGENT]
    assert len(engine.session_log(sid)) == 2  # log length = agent-turn count


def test_forced_rtl_is_respected():
    engine = _engine()
    sid = engine.create_session("u1")
    assert engine.post_message(sid, "force it", force_rtl=CRTL).rtl == CRTL
    assert engine.post_message(sid, "force it", force_rtl=PRTL).rtl == PRTL


def test_free_rtl_is_a_valid_label():
    engine = _engine()
    sid = engine.create_session("u1")
    assert engine.post_message(sid, "your call").rtl in (PRTL, CRTL)


def test_bad_requests_rejected():
    engine = _engine()
    sid = engine.create_session("u1")
    with pytest.raises(BadRequest, match="non-empty"):
        engine.post_message(sid, "   ")
    with pytest.raises(BadRequest, match="force_rtl"):
        engine.post_message(sid, "hi", force_rtl="SOMETIMES")
    with pytest.raises(UnknownSession):
        engine.post_message("s-nope", "hi")
    with pytest.raises(BadRequest, match="user_id"):
        engine.create_session("  ")


def test_no_slot_checkpoint_rejects_force_and_emits_no_label():
    engine = ChatEngine(Checkpoint(params=_PARAMS, config=_CFG, vocab=_VOCAB, step=0, rtl_mode=False, meta={}))
    sid = engine.create_session("u1")
    with pytest.raises(BadRequest, match="no response-type slot"):
        engine.post_message(sid, "force it", force_rtl=PRTL)
    result = engine.post_message(sid, "free run")
    assert result.rtl is None
    assert result.grounding.level in ("hard", "soft")


def test_retrieved_capped_at_top_k_and_from_pool():
    engine = _engine(top_k=3)
    for i in range(6):
        engine.add_persona("u1", f"hobby number {i} is pottery")
    sid = engine.create_session("u1")
    result = engine.post_message(sid, "tell me about pottery")
    assert len(result.retrieved) == 3
    pool_ids = {a.id for a in engine.list_personas("u1")}
    assert all(r.attribute.id in pool_ids for r in result.retrieved)


def test_empty_pool_retrieves_nothing_but_chat_works():
    engine = _engine()
    sid = engine.create_session("fresh-user")
    result = engine.post_message(sid, "hello out there")
    assert result.retrieved == ()
    assert isinstance(result.response, str)


def test_diagnostics_match_offline_recomputation():
    engine = _engine()
    engine.add_persona("u1", "i adore woodfired pizza")
    engine.add_persona("u1", "weekend marathon training")
    sid = engine.create_session("u1")
    result = engine.post_message(sid, "pizza and marathons")
    texts = tuple(r.attribute.text for r in result.retrieved)
    assert result.f1 == persona_f1(result.response, texts)
    idf = engine._user("u1").index.idf
    assert result.cover == p_cover(result.response, texts, idf)
    emitted = result.rtl if result.rtl is not None else PRTL
    want = classify_grounding(
        result.response, [(r.attribute.id, r.attribute.text) for r in result.retrieved], emitted
    )
    assert want == result.grounding


# ---------------------------------------------------------------------------
# Engine: persona CRUD


def test_persona_crud_lifecycle():
    engine = _engine()
    a0 = engine.add_persona("u1", "loves alpine hiking")
    a1 = engine.add_persona("u1", "plays jazz violin")
    assert (a0.id, a1.id) == ("p000", "p001")
    engine.add_persona("u1", "explicit id", attr_id="custom-7")
    assert [a.id for a in engine.list_personas("u1")] == ["custom-7", "p000", "p001"]
    with pytest.raises(BadRequest, match="already exists"):
        engine.add_persona("u1", "again", attr_id="p000")
    removed = engine.delete_persona("u1", "p000")
    assert removed.text == "loves alpine hiking"
    with pytest.raises(UnknownAttribute):
        engine.delete_persona("u1", "p000")
    assert [a.id for a in engine.list_personas("u1")] == ["custom-7", "p001"]
    # auto ids never collide with what exists
    a3 = engine.add_persona("u1", "fresh attribute")
    assert a3.id == "p002"


def test_unknown_user_operations_raise():
    engine = _engine()
    with pytest.raises(UnknownUser):
        engine.list_personas("ghost")
    with pytest.raises(UnknownUser):
        engine.delete_persona("ghost", "p000")
    with pytest.raises(UnknownUser):
        engine.retrieve("ghost", [(USER, "hi")])
    with pytest.raises(BadRequest, match="non-empty"):
        engine.add_persona("u1", "   ")


def test_deleted_attribute_never_retrieved_again():
    engine = _engine()
    engine.add_persona("u1", "collects antique maps")
    engine.add_persona("u1", "brews espresso daily")
    assert engine.retrieve("u1", [(USER, "antique maps")])[0].attribute.id == "p000"
    engine.delete_persona("u1", "p000")
    ranked = engine.retrieve("u1", [(USER, "antique maps")])
    assert all(r.attribute.id != "p000" for r in ranked)


# ---------------------------------------------------------------------------
# Engine: failure consistency and replay


def test_generation_failure_rolls_back_user_turn(tmp_path, monkeypatch):
    engine = _engine(tmp_path)
    sid = engine.create_session("u1")
    engine.post_message(sid, "a good first turn")
    engine_mod = importlib.import_module("wwh_dialogue.service.engine")

    def boom(*args, **kwargs):
        raise RuntimeError("injected fault")

    monkeypatch.setattr(engine_mod, "generate", boom)
    with pytest.raises(GenerationFailed, match="injected fault"):
        engine.post_message(sid, "this one dies")
    monkeypatch.undo()

    state = engine._session(sid)
    assert len(state.turns) == 2  # no dangling user turn
    assert state.turns[-1].speaker == AGENT
    assert len(engine.session_log(sid)) == 1
    journal_kinds = [r["record"] for r in engine.store.records()]
    assert journal_kinds.count("turn") == 1
    # the session still works afterwards
    engine.post_message(sid, "recovered fine")
    assert len(engine._session(sid).turns) == 4


def test_restart_from_journal_restores_everything(tmp_path):
    engine = _engine(tmp_path)
    engine.add_persona("u1", "i adore woodfired pizza")
    engine.add_persona("u1", "training for a marathon")
    engine.add_persona("u2", "violin on weekends")
    sid1 = engine.create_session("u1")
    sid2 = engine.create_session("u2")
    engine.post_message(sid1, "pizza night plans")
    engine.post_message(sid2, "violin practice update", force_rtl=PRTL)
    engine.post_message(sid1, "marathon sunday", force_rtl=CRTL)
    engine.delete_persona("u1", "p001")

    restarted = ChatEngine(_checkpoint(), store=JournalStore(tmp_path / "journal.jsonl"))
    assert [a.text for a in restarted.list_personas("u1")] == ["i adore woodfired pizza"]
    assert [a.text for a in restarted.list_personas("u2")] == ["violin on weekends"]
    assert restarted.session_log(sid1) == engine.session_log(sid1)
    assert restarted.session_log(sid2) == engine.session_log(sid2)
    live = engine._session(sid1)
    replayed = restarted._session(sid1)
    assert [(t.speaker, t.text, t.rtl) for t in live.turns] == [
        (t.speaker, t.text, t.rtl) for t in replayed.turns
    ]
    # the replayed context continues identically to the live one (greedy)
    a = engine.post_message(sid1, "one more for the road")
    b = restarted.post_message(sid1, "one more for the road")
    assert a.response == b.response and a.rtl == b.rtl


def test_logged_script_replays_bit_exact():
    engine = _engine()
    engine.add_persona("u1", "i adore woodfired pizza")
    engine.add_persona("u1", "sunday marathon training")
    script = [
        ("pizza tonight maybe", None),
        ("tell me something", PRTL),
        ("and the weather", CRTL),
        ("marathon progress report", None),
    ]
    first = engine.create_session("u1")
    outputs = [engine.post_message(first, text, force_rtl=f) for text, f in script]
    second = engine.create_session("u1")
    replayed = [engine.post_message(second, text, force_rtl=f) for text, f in script]
    for a, b in zip(outputs, replayed):
        assert a.response == b.response
        assert a.rtl == b.rtl
        assert [r.score for r in a.retrieved] == [r.score for r in b.retrieved]


def test_concurrent_sessions_make_progress():
    engine = _engine()
    engine.add_persona("shared", "pottery wheel sessions")
    sids = [engine.create_session("shared") for _ in range(4)]
    errors = []

    def run(sid):
        try:
            for text in ("first words here", "second words here"):
                engine.post_message(sid, text)
        except Exception as exc:  # pragma: no cover - failure path
            errors.append(exc)

    threads = [threading.Thread(target=run, args=(sid,)) for sid in sids]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    for sid in sids:
        assert len(engine.session_log(sid)) == 2


# ---------------------------------------------------------------------------
# HTTP API


@pytest.fixture()
def client(tmp_path):
    engine = _engine(tmp_path)
    return TestClient(build_app(engine))


def test_healthz_reports_ok(client):
    got = client.get("/v1/healthz")
    assert got.status_code == 200
    body = got.json()
    assert body["status"] == "ok"
    assert body["vocab_size"] == len(_VOCAB)


def test_http_chat_flow_and_shapes(client):
    client.post("/v1/users/u1/personas", json={"text": "i adore woodfired pizza"})
    sid = client.post("/v1/sessions", json={"user_id": "u1"}).json()["session_id"]
    got = client.post(f"/v1/sessions/{sid}/messages", json={"text": "pizza tonight"})
    assert got.status_code == 200
    body = got.json()
    assert set(body) == {"session_id", "response", "rtl", "retrieved", "diagnostics"}
    assert body["rtl"] in ("PRTL", "CRTL")
    assert body["retrieved"][0].keys() == {"id", "text", "score"}
    diag = body["diagnostics"]
    assert set(diag) == {"f1", "p_cover", "grounding"}
    assert set(diag["grounding"]) == {"level", "similarity", "matched_id"}

    log = client.get(f"/v1/sessions/{sid}/log").json()
    assert log["user_id"] == "u1"
    assert len(log["turns"]) == 1
    assert log["turns"][0]["user_text"] == "pizza tonight"
    assert log["turns"][0]["result"]["response"] == body["response"]


def test_http_forced_rtl(client):
    sid = client.post("/v1/sessions", json={"user_id": "u2"}).json()["session_id"]
    got = client.post(f"/v1/sessions/{sid}/messages", json={"text": "hi", "force_rtl": "CRTL"})
    assert got.json()["rtl"] == "CRTL"


def test_http_error_codes(client):
    assert client.post("/v1/sessions/s-none/messages", json={"text": "hi"}).status_code == 404
    assert client.get("/v1/users/ghost/personas").status_code == 404
    assert client.delete("/v1/users/ghost/personas/p000").status_code == 404
    sid = client.post("/v1/sessions", json={"user_id": "u3"}).json()["session_id"]
    assert client.post(f"/v1/sessions/{sid}/messages", json={"text": "  "}).status_code == 400
    assert (
        client.post(f"/v1/sessions/{sid}/messages", json={"text": "x", "force_rtl": "NO"}).status_code
        == 400
    )
    assert client.post(f"/v1/sessions/{sid}/messages", json={}).status_code == 422
    assert client.delete(f"/v1/users/u3/personas/p999").status_code == 404


def test_http_persona_crud(client):
    assert client.post("/v1/users/u4/personas", json={"text": "chess on fridays"}).json() == {
        "id": "p000",
        "text": "chess on fridays",
    }
    client.post("/v1/users/u4/personas", json={"text": "kayak trips", "id": "kx"})
    listing = client.get("/v1/users/u4/personas").json()
    assert [p["id"] for p in listing["personas"]] == ["kx", "p000"]
    assert client.delete("/v1/users/u4/personas/kx").json() == {"deleted": "kx"}
    assert [p["id"] for p in client.get("/v1/users/u4/personas").json()["personas"]] == ["p000"]
    assert (
        client.post("/v1/users/u4/personas", json={"text": "dup", "id": "p000"}).status_code == 400
    )


def test_http_generation_failure_is_500_and_consistent(tmp_path, monkeypatch):
    engine = _engine(tmp_path)
    client = TestClient(build_app(engine), raise_server_exceptions=False)
    sid = client.post("/v1/sessions", json={"user_id": "u1"}).json()["session_id"]
    engine_mod = importlib.import_module("wwh_dialogue.service.engine")
    monkeypatch.setattr(engine_mod, "generate", lambda *a, **k: (_ for _ in ()).throw(RuntimeError("x")))
    got = client.post(f"/v1/sessions/{sid}/messages", json={"text": "dies"})
    assert got.status_code == 500
    monkeypatch.undo()
    assert client.get(f"/v1/sessions/{sid}/log").json()["turns"] == []
    assert client.post(f"/v1/sessions/{sid}/messages", json={"text": "alive"}).status_code == 200


def test_http_retrieval_matches_oracle_over_conversation(client):
    pool_texts = [
        "i adore woodfired pizza",
        "training for the city marathon",
        "jazz violin on weekends",
        "collects antique star maps",
        "espresso before every shift",
        "pottery wheel wednesdays",
    ]
    for text in pool_texts:
        client.post("/v1/users/u9/personas", json={"text": text})
    pool = [(p["id"], p["text"]) for p in client.get("/v1/users/u9/personas").json()["personas"]]
    sid = client.post("/v1/sessions", json={"user_id": "u9"}).json()["session_id"]

    user_texts = []
    rng = np.random.default_rng(17)
    vocab_words = ["pizza", "marathon", "violin", "maps", "espresso", "pottery", "weekend", "city"]
    for i in range(12):
        n = int(rng.integers(1, 5))
        text = " ".join(vocab_words[int(rng.integers(0, len(vocab_words)))] for _ in range(n))
        user_texts.append(text)
        body = client.post(f"/v1/sessions/{sid}/messages", json={"text": text}).json()
        query = " ".join(user_texts[-2:])
        want = oracle_scores(pool, query)[:5]
        got = [(r["id"], r["score"]) for r in body["retrieved"]]
        assert got == want  # float-exact through the HTTP boundary
