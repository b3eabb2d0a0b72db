"""Umbrella command line for the dialogue stack.

Subcommands cover the whole lifecycle: corpus inspection (`corpus`),
synthetic generation (`gen-corpus`), weighted blending (`blend`), negative
persona augmentation (`augment`), training (`train`), an interactive REPL
(`chat`), offline evaluation (`eval`), configuration sweeps (`sweep`), and
the HTTP service (`serve`). Every command is deterministic given its seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .augmentation import NEGATIVE_SOURCES, SAME_USER, AugmentConfig, AugmentError
from .blending import (
    MSPD_NPR,
    MSPD_PR,
    BlendError,
    BlendSpec,
    collect_instances,
    materialize,
    read_manifest,
    resolve_plan,
    split_mspd,
    write_manifest,
)
from .corpus import (
    CRTL,
    PRTL,
    CorpusError,
    corpus_stats,
    load_corpus,
    load_corpus_with_header,
    save_corpus,
    validate_episode,
)
from .evaluation import EvalError, build_idf_table, evaluate_checkpoint
from .model import (
    CheckpointError,
    ConfigError,
    DecodeConfig,
    ModelConfig,
    ModelError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .pipeline import (
    assemble_instances,
    build_data_context,
    labeled_refs,
    split_holdout_sessions,
)
from .retrieval import RetrievalError
from .serialization import (
    DEFAULT_MAX_SEQ_LEN,
    SerializationError,
    read_training_file,
    write_training_file,
)
from .service import ChatEngine, JournalStore, ServiceError, StoreError
from .syngen import GENERATOR_KINDS, GeneratorConfig, generate
from .sweep import (
    SweepRow,
    build_sweep_setup,
    format_table,
    regime_rows,
    run_sweep,
    weight_sweep_rows,
)
from .vocab import PAD, VocabError, Vocabulary, build_vocab

_DOMAIN_ERRORS = (
    CorpusError,
    BlendError,
    AugmentError,
    SerializationError,
    ConfigError,
    ModelError,
    CheckpointError,
    EvalError,
    RetrievalError,
    ServiceError,
    StoreError,
    VocabError,
    yaml.YAMLError,
    OSError,
)


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _load_yaml(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        obj = yaml.safe_load(fh)
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return obj


# ---------------------------------------------------------------------------
# corpus


def _cmd_corpus_validate(args) -> int:
    episodes, header = load_corpus_with_header(args.path, validate=False)
    violations = []
    for ep in episodes:
        violations.extend(validate_episode(ep, header))
    for v in violations:
        print(v)
    if violations:
        print(f"FAIL: {len(violations)} violation(s) across {len(episodes)} episode(s)")
        return 1
    print(f"OK: {len(episodes)} episode(s), schema clean")
    return 0


def _cmd_corpus_stats(args) -> int:
    episodes = load_corpus(args.path)
    stats = corpus_stats(episodes)
    for key, value in stats.as_dict().items():
        if isinstance(value, float):
            print(f"{key:32s} {value:.3f}")
        else:
            print(f"{key:32s} {value}")
    return 0


# ---------------------------------------------------------------------------
# gen-corpus


def _cmd_gen_corpus(args) -> int:
    cfg = GeneratorConfig(
        n_episodes=args.n,
        seed=args.seed,
        sessions_per_episode=args.sessions,
        template_bank_path=args.template_bank,
    )
    episodes = generate(cfg, args.kind)
    save_corpus(episodes, args.out)
    n_turns = sum(len(s.turns) for ep in episodes for s in ep.sessions)
    print(f"wrote {len(episodes)} {args.kind} episode(s), {n_turns} turns -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# blend


def _load_datasets(rows: list[dict], base: Path) -> tuple[dict[str, str], dict[str, list]]:
    """Resolve (dataset_id -> path) and load each distinct corpus once."""
    paths: dict[str, str] = {}
    corpora_by_path: dict[str, list] = {}
    for row in rows:
        try:
            dataset_id, path = row["dataset_id"], row["path"]
        except KeyError as exc:
            raise BlendError(f"blend spec row missing key {exc}") from exc
        if dataset_id in paths:
            raise BlendError(f"duplicate dataset id {dataset_id!r} in blend spec")
        resolved = str((base / path) if not Path(path).is_absolute() else Path(path))
        paths[dataset_id] = resolved
        if resolved not in corpora_by_path:
            corpora_by_path[resolved] = load_corpus(resolved)
    return paths, corpora_by_path


def _dataset_refs(paths: dict[str, str], corpora_by_path: dict[str, list]) -> dict[str, list]:
    """InstanceRef pools per dataset id; the labeled split handles mspd ids."""
    pools: dict[str, list] = {}
    mspd_ids = [d for d in paths if d in (MSPD_PR, MSPD_NPR)]
    if mspd_ids:
        mspd_paths = {paths[d] for d in mspd_ids}
        if len(mspd_paths) != 1:
            raise BlendError(f"{MSPD_PR} and {MSPD_NPR} must reference the same corpus file")
        pr, npr = split_mspd(corpora_by_path[mspd_paths.pop()])
        pools[MSPD_PR], pools[MSPD_NPR] = pr, npr
    for dataset_id, path in paths.items():
        if dataset_id in (MSPD_PR, MSPD_NPR):
            continue
        pools[dataset_id] = collect_instances(corpora_by_path[path], dataset_id)
    return pools


def _cmd_blend(args) -> int:
    spec_obj = _load_yaml(args.spec)
    rows = spec_obj.get("datasets")
    if not isinstance(rows, list) or not rows:
        raise BlendError(f"{args.spec}: 'datasets' must be a non-empty list")
    base = Path(args.spec).parent
    paths, corpora_by_path = _load_datasets(rows, base)
    pools = _dataset_refs(paths, corpora_by_path)
    spec = BlendSpec.build(
        (row["dataset_id"], row["weight"], len(pools[row["dataset_id"]])) for row in rows
    )
    plan = resolve_plan(spec)
    refs = materialize(plan, pools, args.seed)
    write_manifest(refs, plan, args.seed, args.out, extra_header={"datasets": paths})
    for entry in plan.entries:
        print(
            f"{entry.dataset_id:12s} available={entry.available:6d} "
            f"target={entry.target:6d} mode={entry.mode}"
        )
    print(f"wrote {len(refs)} instance ref(s) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# augment


def _context_from_manifest(header: dict, manifest_path: str):
    datasets = header.get("datasets")
    if not isinstance(datasets, dict) or not datasets:
        raise BlendError(
            f"{manifest_path}: manifest header lacks dataset paths; recreate it with `wwh blend`"
        )
    base = Path(manifest_path).parent
    loaded: dict[str, list] = {}
    for dataset_id, path in datasets.items():
        resolved = str((base / path) if not Path(path).is_absolute() else Path(path))
        loaded[dataset_id] = load_corpus(resolved)
    mspd_ids = [d for d in loaded if d in (MSPD_PR, MSPD_NPR)]
    casual = {d: eps for d, eps in loaded.items() if d not in (MSPD_PR, MSPD_NPR)}
    if mspd_ids:
        mspd_episodes = loaded[mspd_ids[0]]
    elif casual:
        raise BlendError("augmentation requires a labeled corpus ({}/{})".format(MSPD_PR, MSPD_NPR))
    else:
        raise BlendError("manifest references no datasets")
    corpora = [mspd_episodes] + list(casual.values())
    return build_data_context(mspd_episodes, casual or None), corpora


def _cmd_augment(args) -> int:
    refs, header = read_manifest(args.manifest)
    data, corpora = _context_from_manifest(header, args.manifest)
    vocab = build_vocab(corpora)
    aug = AugmentConfig(k=args.k, negative_source=args.negative_source, rng_seed=args.seed)
    rtl_mode = not args.no_rtl
    instances = assemble_instances(
        refs, data, aug, vocab, rtl_mode=rtl_mode, max_seq_len=args.max_seq_len
    )
    out = Path(args.out)
    vocab_path = out.with_name(out.name + ".vocab")
    vocab.save(vocab_path)
    write_training_file(
        instances,
        out,
        vocab,
        extra_header={
            "vocab_file": vocab_path.name,
            "rtl_mode": rtl_mode,
            "k": args.k,
            "negative_source": args.negative_source,
            "seed": args.seed,
            "max_seq_len": args.max_seq_len,
        },
    )
    kinds: dict[str, int] = {}
    for inst in instances:
        kind = inst.meta.get("kind", "?")
        kinds[kind] = kinds.get(kind, 0) + 1
    mix = ", ".join(f"{k}={v}" for k, v in sorted(kinds.items()))
    print(f"wrote {len(instances)} training instance(s) ({mix}) -> {out}")
    print(f"wrote vocabulary ({len(vocab)} tokens) -> {vocab_path}")
    return 0


# ---------------------------------------------------------------------------
# train


def _model_config(section: dict, vocab_size: int, max_seq_len: int | None = None) -> ModelConfig:
    section = dict(section or {})
    section.pop("vocab_size", None)
    if max_seq_len is not None:
        section.setdefault("max_seq_len", max_seq_len)
    try:
        return ModelConfig(vocab_size=vocab_size, **section)
    except TypeError as exc:
        raise ConfigError(f"bad model config: {exc}") from exc


def _train_config(section: dict) -> TrainConfig:
    try:
        return TrainConfig(**(section or {}))
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def _cmd_train(args) -> int:
    instances, header = read_training_file(args.data)
    vocab_file = args.vocab or header.get("vocab_file")
    if vocab_file is None:
        raise SerializationError(f"{args.data}: header names no vocab_file; pass --vocab")
    vocab_path = Path(vocab_file)
    if not vocab_path.is_absolute():
        vocab_path = Path(args.data).parent / vocab_path
    vocab = Vocabulary.load(vocab_path)
    want_sha = header.get("vocab_sha256")
    if want_sha and vocab.sha256() != want_sha:
        raise VocabError(f"vocabulary {vocab_path} does not match the training file's hash")
    cfg_obj = _load_yaml(args.config)
    model_cfg = _model_config(
        cfg_obj.get("model", {}), len(vocab), header.get("max_seq_len")
    )
    train_cfg = _train_config(cfg_obj.get("train", {}))
    rtl_mode = bool(header.get("rtl_mode", True))

    def log(metric):
        print(
            f"step {metric.step:5d} epoch {metric.epoch:3d} "
            f"loss {metric.loss:.4f} grad {metric.grad_norm:.3f}"
        )

    result = train(instances, model_cfg, train_cfg, pad_id=vocab.id(PAD), log=log)
    save_checkpoint(
        args.out,
        result.params,
        model_cfg,
        vocab,
        step=result.steps,
        rtl_mode=rtl_mode,
        meta={"final_loss": result.final_loss, "data": Path(args.data).name},
    )
    print(f"trained {result.steps} step(s), final loss {result.final_loss:.4f} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# chat


def _print_turn(result) -> None:
    tag = result.rtl or "--"
    print(f"agent [{tag}] {result.response}")
    g = result.grounding
    print(
        f"  grounding={g.level} sim={g.similarity:.3f} matched={g.matched_persona_id or '-'} "
        f"f1={result.f1:.3f} p_cover={result.cover:.3f}"
    )
    for r in result.retrieved:
        print(f"  retrieved {r.attribute.id}: {r.attribute.text} ({r.score:.3f})")


def _chat_command(engine: ChatEngine, user: str, line: str, force: list) -> bool:
    """Handle a /command; returns False when the REPL should exit."""
    parts = line.split(maxsplit=2)
    cmd = parts[0]
    if cmd in ("/quit", "/exit"):
        return False
    if cmd == "/force":
        mode = parts[1].lower() if len(parts) > 1 else ""
        if mode == "prtl":
            force[0] = PRTL
        elif mode == "crtl":
            force[0] = CRTL
        elif mode == "off":
            force[0] = None
        else:
            print("usage: /force prtl|crtl|off")
            return True
        print(f"force_rtl = {force[0] or 'off'}")
        return True
    if cmd == "/persona":
        sub = parts[1] if len(parts) > 1 else "list"
        if sub == "add" and len(parts) > 2:
            attr = engine.add_persona(user, parts[2])
            print(f"added {attr.id}: {attr.text}")
        elif sub == "list":
            attrs = engine.list_personas(user)
            if not attrs:
                print("(no persona attributes)")
            for a in attrs:
                print(f"{a.id}: {a.text}")
        elif sub == "del" and len(parts) > 2:
            removed = engine.delete_persona(user, parts[2].strip())
            print(f"deleted {removed.id}")
        else:
            print("usage: /persona add <text> | /persona list | /persona del <id>")
        return True
    print(f"unknown command {cmd}; try /force, /persona, /quit")
    return True


def _cmd_chat(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    store = JournalStore(args.store) if args.store else None
    engine = ChatEngine(
        ckpt, store=store, decode=DecodeConfig(max_new_tokens=args.max_new_tokens), top_k=args.top_k
    )
    session_id = engine.create_session(args.user)
    mode = "with response-type slot" if ckpt.rtl_mode else "no response-type slot"
    print(f"session {session_id} for user {args.user!r} ({mode}); /quit to exit")
    force: list = [None]
    while True:
        try:
            line = input("you> ").strip()
        except EOFError:
            break
        if not line:
            continue
        try:
            if line.startswith("/"):
                if not _chat_command(engine, args.user, line, force):
                    break
                continue
            _print_turn(engine.post_message(session_id, line, force_rtl=force[0]))
        except ServiceError as exc:
            print(f"error: {exc}")
    print("bye")
    return 0


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    episodes = load_corpus(args.data)
    data = build_data_context(episodes)
    aug = AugmentConfig(k=args.k, negative_source=args.negative_source, rng_seed=args.seed)
    instances = assemble_instances(
        labeled_refs(episodes),
        data,
        aug,
        ckpt.vocab,
        rtl_mode=ckpt.rtl_mode,
        max_seq_len=ckpt.config.max_seq_len,
    )
    idf = build_idf_table(a.text for ep in episodes for a in ep.persona_pool)
    report = evaluate_checkpoint(
        ckpt,
        instances,
        idf,
        max_new_tokens=args.max_new_tokens,
        positives_only=args.positives_only,
    )
    obj = {"record": "eval_report", "ckpt": str(args.ckpt), "data": str(args.data)}
    obj.update(report.as_dict())
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True) + "\n")
    print(f"instances {report.n_instances}")
    print(f"perplexity {report.ppl:.4f}")
    print(f"persona_f1 {report.f1:.4f}")
    print(f"p_cover    {report.p_cover:.4f}")
    for label, acc in sorted(report.rtl_accuracy.items()):
        print(f"accuracy[{label}] {acc:.4f}")
    print(
        "grounding  hard={hard} soft={soft} non_personalized={non_personalized}".format(
            **report.grounding_counts
        )
    )
    print(f"wrote report -> {args.report}")
    return 0


# ---------------------------------------------------------------------------
# sweep


def _sweep_rows(spec_obj: dict, casual_ids: list[str]) -> list[SweepRow]:
    preset = spec_obj.get("preset")
    rows_obj = spec_obj.get("rows")
    if preset is not None and rows_obj is not None:
        raise ConfigError("sweep spec may set either 'preset' or 'rows', not both")
    if preset is not None:
        if len(casual_ids) != 1:
            raise ConfigError("sweep presets need exactly one casual dataset")
        if preset == "weights":
            return weight_sweep_rows(casual_ids[0])
        if preset == "regimes":
            return regime_rows(casual_ids[0])
        raise ConfigError(f"unknown sweep preset {preset!r} (try 'weights' or 'regimes')")
    if not isinstance(rows_obj, list) or not rows_obj:
        raise ConfigError("sweep spec needs a non-empty 'rows' list or a 'preset'")
    rows = []
    for obj in rows_obj:
        try:
            rows.append(
                SweepRow(
                    name=obj["name"],
                    weights={str(k): str(v) for k, v in obj["weights"].items()},
                    k=int(obj.get("k", 5)),
                    rtl_mode=bool(obj.get("rtl_mode", True)),
                    negative_source=obj.get("negative_source", SAME_USER),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"sweep row missing key {exc}") from exc
    return rows


def _cmd_sweep(args) -> int:
    spec_obj = _load_yaml(args.spec)
    corpus_obj = spec_obj.get("corpus")
    if not isinstance(corpus_obj, dict) or "mspd" not in corpus_obj:
        raise ConfigError(f"{args.spec}: 'corpus' must be a mapping with an 'mspd' path")
    base = Path(args.spec).parent

    def _resolve(p):
        return str((base / p) if not Path(str(p)).is_absolute() else Path(str(p)))

    mspd = load_corpus(_resolve(corpus_obj["mspd"]))
    casual = {
        str(name): load_corpus(_resolve(path))
        for name, path in (corpus_obj.get("casual") or {}).items()
    }
    train_eps, eval_eps = split_holdout_sessions(
        mspd, n_eval=int(corpus_obj.get("holdout_sessions", 1))
    )
    setup = build_sweep_setup(train_eps, eval_eps, casual or None)
    rows = _sweep_rows(spec_obj, sorted(casual))
    model_cfg = _model_config(spec_obj.get("model", {}), len(setup.vocab))
    train_cfg = _train_config(spec_obj.get("train", {}))
    eval_obj = spec_obj.get("eval") or {}

    def log(metric):
        print(f"  step {metric.step:5d} epoch {metric.epoch:3d} loss {metric.loss:.4f}")

    results = run_sweep(
        rows,
        setup,
        model_cfg,
        train_cfg,
        out_dir=args.out,
        aug_seed=int(spec_obj.get("aug_seed", 0)),
        blend_seed=int(spec_obj.get("blend_seed", 0)),
        max_new_tokens=int(eval_obj.get("max_new_tokens", 24)),
        log=log,
    )
    print(format_table(results))
    print(f"wrote reports and checkpoints -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# serve


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import build_app

    ckpt = load_checkpoint(args.ckpt)
    engine = ChatEngine(
        ckpt,
        store=JournalStore(args.store),
        decode=DecodeConfig(max_new_tokens=args.max_new_tokens),
        top_k=args.top_k,
    )
    app = build_app(engine)
    print(f"serving on http://{args.host}:{args.port} (API under /v1)")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wwh", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_corpus = sub.add_parser("corpus", help="validate or summarize a corpus file")
    corpus_sub = p_corpus.add_subparsers(dest="corpus_command", required=True)
    p_val = corpus_sub.add_parser("validate", help="schema-check every episode")
    p_val.add_argument("path")
    p_val.set_defaults(func=_cmd_corpus_validate)
    p_stats = corpus_sub.add_parser("stats", help="corpus-level counts and averages")
    p_stats.add_argument("path")
    p_stats.set_defaults(func=_cmd_corpus_stats)

    p_gen = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p_gen.add_argument("--kind", required=True, choices=GENERATOR_KINDS)
    p_gen.add_argument("--n", required=True, type=int, help="number of episodes")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--sessions", type=int, default=4, help="sessions per episode")
    p_gen.add_argument("--template-bank", default=None, help="alternate template bank file")
    p_gen.set_defaults(func=_cmd_gen_corpus)

    p_blend = sub.add_parser("blend", help="resolve blending weights into an instance manifest")
    p_blend.add_argument("--spec", required=True, help="YAML with datasets: [{dataset_id, path, weight}]")
    p_blend.add_argument("--seed", type=int, default=0)
    p_blend.add_argument("--out", required=True)
    p_blend.set_defaults(func=_cmd_blend)

    p_aug = sub.add_parser("augment", help="build persona subsets and serialize training instances")
    p_aug.add_argument("--manifest", required=True)
    p_aug.add_argument("--k", type=int, default=5, help="persona subset size")
    p_aug.add_argument("--seed", type=int, default=0)
    p_aug.add_argument("--out", required=True)
    p_aug.add_argument("--negative-source", default=SAME_USER, choices=NEGATIVE_SOURCES)
    p_aug.add_argument("--no-rtl", action="store_true", help="omit response-type tokens (ablation)")
    p_aug.add_argument("--max-seq-len", type=int, default=DEFAULT_MAX_SEQ_LEN)
    p_aug.set_defaults(func=_cmd_augment)

    p_train = sub.add_parser("train", help="train a model on a serialized training file")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--config", required=True, help="YAML with model: and train: sections")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--vocab", default=None, help="override the vocabulary file")
    p_train.set_defaults(func=_cmd_train)

    p_chat = sub.add_parser("chat", help="interactive REPL against a checkpoint")
    p_chat.add_argument("--ckpt", required=True)
    p_chat.add_argument("--store", default=None, help="journal file for persistence")
    p_chat.add_argument("--user", default="local")
    p_chat.add_argument("--top-k", type=int, default=5)
    p_chat.add_argument("--max-new-tokens", type=int, default=24)
    p_chat.set_defaults(func=_cmd_chat)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a labeled corpus")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True, help="labeled corpus file")
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--k", type=int, default=5)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--negative-source", default=SAME_USER, choices=NEGATIVE_SOURCES)
    p_eval.add_argument("--max-new-tokens", type=int, default=24)
    p_eval.add_argument("--positives-only", action="store_true")
    p_eval.set_defaults(func=_cmd_eval)

    p_sweep = sub.add_parser("sweep", help="train and evaluate a grid of configurations")
    p_sweep.add_argument("--spec", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_serve = sub.add_parser("serve", help="run the HTTP chat service")
    p_serve.add_argument("--ckpt", required=True)
    p_serve.add_argument("--store", required=True)
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--top-k", type=int, default=5)
    p_serve.add_argument("--max-new-tokens", type=int, default=24)
    p_serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _DOMAIN_ERRORS as exc:
        return _fail(str(exc))
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
