"""End-to-end data preparation: corpora -> blend -> augment -> serialize.

This module owns the bookkeeping that connects the stages: which dataset ids
map to which episode lists, which datasets are casual, how an instance
reference becomes a serialized training instance, and which metadata rides
along for evaluation (instance kind, positive-attribute positions, origin).
"""

from __future__ import annotations

from dataclasses import dataclass

from .augmentation import (
    AugmentConfig,
    ForeignPool,
    augment_instance,
    build_foreign_pool,
)
from .blending import (
    MSPD_NPR,
    MSPD_PR,
    BlendError,
    BlendSpec,
    InstanceRef,
    collect_instances,
    materialize,
    resolve_plan,
    split_mspd,
)
from .corpus import AGENT, PRTL, Episode
from .serialization import DEFAULT_MAX_SEQ_LEN, TrainingInstance, serialize
from .templates import TopicLexicon, load_template_bank, topic_lexicon
from .vocab import Vocabulary, build_vocab


def corpus_tables(
    mspd_episodes: list[Episode],
    casual: dict[str, list[Episode]] | None = None,
) -> tuple[dict[str, list[Episode]], frozenset[str]]:
    """Dataset-id table and the set of casual dataset ids.

    The personalized corpus appears twice — once per response-type split —
    both entries sharing the same episode list.
    """
    casual = casual or {}
    overlap = {MSPD_PR, MSPD_NPR} & set(casual)
    if overlap:
        raise BlendError(f"casual corpora may not reuse reserved dataset ids {sorted(overlap)}")
    corpora = {MSPD_PR: mspd_episodes, MSPD_NPR: mspd_episodes, **casual}
    return corpora, frozenset(casual)


def split_holdout_sessions(
    episodes: list[Episode], n_eval: int = 1
) -> tuple[list[Episode], list[Episode]]:
    """Per-user temporal split: the last `n_eval` sessions of every episode
    become the held-out set, earlier sessions the training set.

    Both halves keep the full persona pool and user identity, so held-out
    conversations exercise attributes (and vocabulary) the model actually
    trained on — the natural evaluation for a multi-session corpus.
    """
    train: list[Episode] = []
    heldout: list[Episode] = []
    for ep in episodes:
        if len(ep.sessions) <= n_eval:
            raise BlendError(
                f"episode {ep.user_id} has {len(ep.sessions)} sessions; cannot hold out {n_eval}"
            )
        train.append(
            Episode(
                user_id=ep.user_id,
                demographics=ep.demographics,
                persona_pool=ep.persona_pool,
                sessions=ep.sessions[:-n_eval],
            )
        )
        heldout.append(
            Episode(
                user_id=ep.user_id,
                demographics=ep.demographics,
                persona_pool=ep.persona_pool,
                sessions=ep.sessions[-n_eval:],
            )
        )
    return train, heldout


def labeled_refs(episodes: list[Episode]) -> list[InstanceRef]:
    """All agent turns of a personalized corpus, in corpus order, with the
    dataset id chosen by the turn's gold label."""
    refs: list[InstanceRef] = []
    for ep in episodes:
        for s_idx, session in enumerate(ep.sessions):
            for t_idx, turn in enumerate(session.turns):
                if turn.speaker != AGENT:
                    continue
                dataset = MSPD_PR if turn.rtl == PRTL else MSPD_NPR
                refs.append(InstanceRef(dataset, ep.user_id, s_idx, t_idx))
    return refs


@dataclass(frozen=True)
class DataContext:
    """Everything ref resolution needs, prebuilt once."""

    corpora: dict[str, list[Episode]]
    casual_ids: frozenset[str]
    by_user: dict[str, dict[str, Episode]]
    lexicon: TopicLexicon
    foreign: ForeignPool


def build_data_context(
    mspd_episodes: list[Episode],
    casual: dict[str, list[Episode]] | None = None,
    lexicon: TopicLexicon | None = None,
) -> DataContext:
    corpora, casual_ids = corpus_tables(mspd_episodes, casual)
    if lexicon is None:
        lexicon = topic_lexicon(load_template_bank())
    by_user = {
        dataset: {ep.user_id: ep for ep in eps} for dataset, eps in corpora.items()
    }
    for dataset, table in by_user.items():
        if len(table) != len(corpora[dataset]):
            raise BlendError(f"duplicate user ids in dataset {dataset!r}")
    foreign = build_foreign_pool(mspd_episodes, lexicon)
    return DataContext(
        corpora=corpora,
        casual_ids=casual_ids,
        by_user=by_user,
        lexicon=lexicon,
        foreign=foreign,
    )


def assemble_instances(
    refs: list[InstanceRef],
    data: DataContext,
    aug_cfg: AugmentConfig,
    vocab: Vocabulary,
    rtl_mode: bool = True,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
) -> list[TrainingInstance]:
    """Serialize every reference, in order, with its augmented persona subset."""
    out: list[TrainingInstance] = []
    for ref in refs:
        try:
            episode = data.by_user[ref.dataset_id][ref.episode_id]
        except KeyError:
            raise BlendError(f"unknown instance origin {ref}") from None
        session = episode.sessions[ref.session_index]
        turn = session.turns[ref.turn_index]
        if turn.speaker != AGENT:
            raise BlendError(f"{ref} does not point at an agent turn")
        is_casual = ref.dataset_id in data.casual_ids
        subset = augment_instance(
            ref, episode, is_casual, aug_cfg, foreign=data.foreign, lexicon=data.lexicon
        )
        positive = set(subset.positive_ids)
        meta = {
            "kind": subset.kind,
            "positive_idx": [i for i, a in enumerate(subset.attributes) if a.id in positive],
            "ref": ref.as_obj(),
        }
        out.append(
            serialize(
                episode.demographics,
                subset.texts(),
                list(session.turns[: ref.turn_index]),
                turn.rtl,
                turn.text,
                vocab,
                max_seq_len=max_seq_len,
                include_rtl=rtl_mode,
                meta=meta,
            )
        )
    return out


@dataclass(frozen=True)
class PreparedData:
    """A blended, augmented, serialized training set plus its vocabulary."""

    vocab: Vocabulary
    instances: list[TrainingInstance]
    refs: list[InstanceRef]


def prepare_dataset(
    data: DataContext,
    weights: dict[str, object],
    aug_cfg: AugmentConfig,
    blend_seed: int = 0,
    total: int | None = None,
    vocab: Vocabulary | None = None,
    rtl_mode: bool = True,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
) -> PreparedData:
    """Blend the named datasets and serialize the result.

    `weights` maps dataset id -> blending weight (string or Fraction input
    preserves exactness). The blended set always totals the combined pool
    size; `total`, when given, is validated against it. The vocabulary
    defaults to one built over every corpus in `data`.
    """
    pools: dict[str, list[InstanceRef]] = {}
    mspd_eps = data.corpora[MSPD_PR]
    pr_refs, npr_refs = split_mspd(mspd_eps)
    if MSPD_PR in weights:
        pools[MSPD_PR] = pr_refs
    if MSPD_NPR in weights:
        pools[MSPD_NPR] = npr_refs
    for dataset in weights:
        if dataset in (MSPD_PR, MSPD_NPR):
            continue
        if dataset not in data.corpora:
            raise BlendError(f"blend names unknown dataset {dataset!r}")
        pools[dataset] = collect_instances(data.corpora[dataset], dataset)

    rows = [(dataset, weights[dataset], len(pools[dataset])) for dataset in sorted(weights)]
    spec = BlendSpec.build(rows, total_pool=total)
    plan = resolve_plan(spec)
    refs = materialize(plan, pools, rng_seed=blend_seed)

    if vocab is None:
        seen = []
        for dataset, eps in data.corpora.items():
            if dataset == MSPD_NPR and data.corpora.get(MSPD_PR) is eps:
                continue
            seen.append(eps)
        vocab = build_vocab(seen)
    instances = assemble_instances(
        refs, data, aug_cfg, vocab, rtl_mode=rtl_mode, max_seq_len=max_seq_len
    )
    return PreparedData(vocab=vocab, instances=instances, refs=refs)
