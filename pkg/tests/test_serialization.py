import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wwh_dialogue.corpus import AGENT, CRTL, PRTL, USER, Demographics, Turn
from wwh_dialogue.serialization import (
    ParsedInstance,
    SerializationError,
    TrainingInstance,
    deserialize,
    read_training_file,
    serialize,
    write_training_file,
)
from wwh_dialogue.syngen import GeneratorConfig, generate_mspd
from wwh_dialogue.vocab import (
    AGT,
    BOS,
    CRTL_TOK,
    DEMO,
    EOS,
    PERSONA,
    PRTL_TOK,
    SEP,
    SPECIALS,
    UNK,
    USR,
    VocabError,
    Vocabulary,
    build_vocab,
)

EPISODES = generate_mspd(GeneratorConfig(n_episodes=12, seed=21))
VOCAB = build_vocab([EPISODES])
DEMO_EX = Demographics(gender="female", age_band="30s")


def toks(instance):
    return [VOCAB.token(i) for i in instance.input_ids]


# ---------------------------------------------------------------------------
# Vocabulary


def test_specials_occupy_first_ids_in_order():
    for i, tok in enumerate(SPECIALS):
        assert VOCAB.token(i) == tok
        assert VOCAB.id(tok) == i


def test_vocab_sorting_frequency_then_lexicographic():
    from wwh_dialogue.corpus import Episode, PersonaAttribute, Session

    ep = EPISODES[0]
    # same corpus twice -> identical table (determinism)
    again = build_vocab([EPISODES])
    assert again.tokens == VOCAB.tokens
    assert again.sha256() == VOCAB.sha256()


def test_vocab_word_order_is_freq_desc_then_lex():
    words = VOCAB.tokens[len(SPECIALS) :]
    # reconstruct counts
    from wwh_dialogue.vocab import _corpus_words

    counts = {}
    for w in _corpus_words(EPISODES):
        counts[w] = counts.get(w, 0) + 1
    assert list(words) == sorted(counts, key=lambda w: (-counts[w], w))


def test_vocab_is_closed_over_synthetic_corpus():
    assert len(VOCAB) < 4096
    unk = VOCAB.id(UNK)
    for ep in EPISODES:
        for session in ep.sessions:
            for turn in session.turns:
                from wwh_dialogue.textnorm import words as toklist

                for w in toklist(turn.text):
                    assert VOCAB.encode_word(w) != unk


def test_unknown_word_maps_to_unk():
    assert VOCAB.encode_word("zyzzogeton") == VOCAB.id(UNK)
    with pytest.raises(VocabError):
        VOCAB.id("zyzzogeton")
    with pytest.raises(VocabError):
        VOCAB.token(10**6)


def test_vocab_save_load_roundtrip(tmp_path):
    path = tmp_path / "vocab.txt"
    VOCAB.save(path)
    loaded = Vocabulary.load(path)
    assert loaded == VOCAB
    assert loaded.sha256() == VOCAB.sha256()
    assert path.read_text().splitlines()[0] == BOS


def test_vocab_rejects_bad_tables():
    with pytest.raises(VocabError):
        Vocabulary(tokens=("<BOS>", "<EOS>"))
    with pytest.raises(VocabError):
        Vocabulary(tokens=SPECIALS + ("a", "a"))
    with pytest.raises(VocabError):
        build_vocab([[]])


def test_min_count_filters_rare_words():
    vocab2 = build_vocab([EPISODES], min_count=2)
    assert len(vocab2) <= len(VOCAB)


# ---------------------------------------------------------------------------
# Serialization layout


def context_ending_user(texts):
    turns = []
    for i, text in enumerate(texts):
        speaker = USER if i % 2 == 0 else AGENT
        turns.append(Turn(speaker, text, rtl=None if speaker == USER else CRTL))
    assert turns[-1].speaker == USER
    return turns


def test_casual_instance_has_no_persona_token():
    inst = serialize(DEMO_EX, (), context_ending_user(["hello there"]), CRTL, "hi there", VOCAB)
    assert PERSONA not in toks(inst)


def test_persona_section_has_k_segments():
    personas = tuple(f"my hobby has always been painting" for _ in range(5))
    inst = serialize(DEMO_EX, personas, context_ending_user(["hello"]), PRTL, "ok", VOCAB)
    t = toks(inst)
    start = t.index(PERSONA)
    end = t.index(USR)
    assert t[start + 1 : end].count(SEP) == 5


def test_layout_and_mask():
    inst = serialize(
        DEMO_EX,
        ("my food is sushi",),
        context_ending_user(["i was thinking about sushi today"]),
        PRTL,
        "you said your food is sushi right",
        VOCAB,
    )
    t = toks(inst)
    assert t[0] == BOS
    assert t[1] == DEMO
    assert t[2:4] == ["female", "30s"]
    assert t[4] == SEP
    assert t[5] == PERSONA
    assert t[-1] == EOS
    rtl_pos = t.index(PRTL_TOK)
    assert t[rtl_pos - 1] == AGT
    n_y = len("you said your food is sushi right".split())
    assert sum(inst.loss_mask) == 1 + n_y + 1
    assert list(inst.loss_mask[rtl_pos:]) == [True] * (len(t) - rtl_pos)
    assert not any(inst.loss_mask[:rtl_pos])


def test_no_rtl_regime_omits_label_slot():
    w = VOCAB.tokens[len(SPECIALS)]  # any in-vocabulary word
    inst = serialize(
        DEMO_EX, (), context_ending_user([f"{w} {w}"]), None, w, VOCAB, include_rtl=False
    )
    t = toks(inst)
    assert PRTL_TOK not in t and CRTL_TOK not in t
    assert sum(inst.loss_mask) == 1 + 1  # response word + EOS
    parsed = deserialize(inst.input_ids, VOCAB)
    assert parsed.rtl is None
    assert parsed.response == w
    with pytest.raises(SerializationError, match="label slot"):
        deserialize(inst.input_ids, VOCAB, require_rtl=True)


def test_rtl_required_for_labeled_instances():
    with pytest.raises(SerializationError, match="rtl must be"):
        serialize(DEMO_EX, (), context_ending_user(["hello"]), None, "hi", VOCAB)


def test_truncation_keeps_most_recent_turns():
    texts = [f"turn number {i} spoken now" for i in range(39)]
    texts = texts[:-1] + ["the final user turn"]
    ctx = context_ending_user(texts)
    inst = serialize(DEMO_EX, (), ctx, CRTL, "short reply", VOCAB, max_seq_len=80)
    parsed = deserialize(inst.input_ids, VOCAB)
    # recovered context must be a suffix of the original
    norm = lambda s: " ".join(w if VOCAB.encode_word(w) != VOCAB.id(UNK) else UNK.lower() for w in s.split())
    original = [(t.speaker, t.text) for t in ctx]
    recovered = list(parsed.context) + [(AGENT, parsed.response)]
    k = len(parsed.context)
    assert k < len(ctx)
    assert [s for s, _ in parsed.context] == [s for s, _ in original[len(ctx) - k :]]
    assert parsed.context[-1][0] == USER


def test_oversized_fixed_part_errors():
    personas = tuple("my hobby has always been painting" for _ in range(5))
    with pytest.raises(SerializationError, match="zero context"):
        serialize(DEMO_EX, personas, [], PRTL, "ok", VOCAB, max_seq_len=16)


def test_mask_contiguity_enforced():
    with pytest.raises(SerializationError, match="contiguous"):
        TrainingInstance(input_ids=(1, 2, 3), loss_mask=(True, False, True), rtl=None)
    with pytest.raises(SerializationError, match="lengths"):
        TrainingInstance(input_ids=(1, 2), loss_mask=(True,), rtl=None)


def test_deserialize_rejects_malformed():
    good = serialize(DEMO_EX, (), context_ending_user(["hello"]), CRTL, "hi", VOCAB)
    # missing EOS
    with pytest.raises(SerializationError):
        deserialize(good.input_ids[:-1], VOCAB)
    # missing BOS
    with pytest.raises(SerializationError):
        deserialize(good.input_ids[1:], VOCAB)
    # truncated demographics
    with pytest.raises(SerializationError):
        deserialize(good.input_ids[:3], VOCAB)


# ---------------------------------------------------------------------------
# Round-trip over generated instances

word_pool = [t for t in VOCAB.tokens[len(SPECIALS) :]][:50]
text_st = st.lists(st.sampled_from(word_pool), min_size=1, max_size=8).map(" ".join)


@given(
    persona_count=st.integers(min_value=0, max_value=5),
    n_pairs=st.integers(min_value=0, max_value=3),
    data=st.data(),
)
@settings(max_examples=120, deadline=None)
def test_roundtrip_random_instances(persona_count, n_pairs, data):
    personas = tuple(data.draw(text_st) for _ in range(persona_count))
    ctx_texts = [data.draw(text_st) for _ in range(2 * n_pairs + 1)]
    ctx = context_ending_user(ctx_texts)
    rtl = data.draw(st.sampled_from([PRTL, CRTL]))
    response = data.draw(text_st)
    inst = serialize(DEMO_EX, personas, ctx, rtl, response, VOCAB, max_seq_len=512)
    parsed = deserialize(inst.input_ids, VOCAB)
    assert parsed.demo_words == ("female", "30s")
    assert parsed.persona_texts == personas
    assert list(parsed.context) == [(t.speaker, t.text) for t in ctx]
    assert parsed.rtl == rtl
    assert parsed.response == response


def test_roundtrip_on_corpus_instances():
    from wwh_dialogue.augmentation import AugmentConfig, augment_instance, build_foreign_pool
    from wwh_dialogue.blending import split_mspd
    from wwh_dialogue.templates import load_template_bank, topic_lexicon

    lex = topic_lexicon(load_template_bank())
    foreign = build_foreign_pool(EPISODES, lex)
    by_id = {ep.user_id: ep for ep in EPISODES}
    pr, npr = split_mspd(EPISODES)
    cfg = AugmentConfig(k=5, rng_seed=9)
    for ref in (pr + npr)[:120]:
        ep = by_id[ref.episode_id]
        subset = augment_instance(ref, ep, False, cfg, foreign, lex)
        session = ep.sessions[ref.session_index]
        ctx = session.turns[: ref.turn_index]
        target = session.turns[ref.turn_index]
        inst = serialize(
            ep.demographics, subset.texts(), ctx, target.rtl, target.text, VOCAB
        )
        parsed = deserialize(inst.input_ids, VOCAB)
        assert parsed.persona_texts == subset.texts()
        assert parsed.rtl == target.rtl
        assert parsed.response == target.text
        assert list(parsed.context) == [(t.speaker, t.text) for t in ctx]


def test_training_file_roundtrip(tmp_path):
    insts = [
        serialize(DEMO_EX, (), context_ending_user(["hello"]), CRTL, "hi", VOCAB, meta={"n": 1}),
        serialize(
            DEMO_EX,
            ("my food is sushi",),
            context_ending_user(["i was thinking about sushi"]),
            PRTL,
            "you said your food is sushi right",
            VOCAB,
            meta={"n": 2},
        ),
    ]
    path = tmp_path / "train.jsonl"
    write_training_file(insts, path, VOCAB, extra_header={"note": "test"})
    loaded, header = read_training_file(path)
    assert loaded == insts
    assert [i.meta["n"] for i in loaded] == [1, 2]
    assert header["vocab_sha256"] == VOCAB.sha256()
    assert header["count"] == 2
    assert header["note"] == "test"
