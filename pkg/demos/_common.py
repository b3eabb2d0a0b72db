"""Shared helpers for the demo scripts: a micro corpus and a micro model.

Everything here is sized to finish in seconds. Metric quality at this size is
illustrative only — the `wwh sweep` presets show the recipe that produces the
trend-level numbers.
"""

from wwh_dialogue.augmentation import AugmentConfig
from wwh_dialogue.blending import MSPD_NPR, MSPD_PR
from wwh_dialogue.model import Checkpoint, ModelConfig, TrainConfig, train
from wwh_dialogue.pipeline import build_data_context, prepare_dataset, split_holdout_sessions
from wwh_dialogue.syngen import GeneratorConfig, generate, generate_mspd
from wwh_dialogue.vocab import PAD, build_vocab

MICRO_WEIGHTS = {"daily": "0.85", MSPD_PR: "0.7", MSPD_NPR: "0.8"}


def micro_corpus():
    """Six annotated multi-session episodes plus three casual episodes."""
    mspd = generate_mspd(GeneratorConfig(n_episodes=6, seed=11))
    casual = generate(GeneratorConfig(n_episodes=3, seed=12), kind="daily")
    return mspd, casual


def micro_checkpoint(epochs: int = 4, quiet: bool = True):
    """Train a tiny model on the micro corpus; returns (checkpoint, eval episodes)."""
    mspd, casual = micro_corpus()
    train_eps, eval_eps = split_holdout_sessions(mspd)
    data = build_data_context(train_eps, {"daily": casual})
    vocab = build_vocab([mspd, casual])
    cfg = ModelConfig(vocab_size=len(vocab), n_layers=2, d_model=32, n_heads=2,
                      max_seq_len=256, dropout=0.0, seed=5)
    prep = prepare_dataset(data, MICRO_WEIGHTS, AugmentConfig(k=5, rng_seed=0),
                           blend_seed=0, vocab=vocab, max_seq_len=cfg.max_seq_len)
    log = None if quiet else (lambda m: print(f"  step {m.step:4d}  loss {m.loss:.3f}"))
    result = train(prep.instances, cfg,
                   TrainConfig(lr=2e-3, batch_size=8, epochs=epochs, seed=5, log_every=40),
                   pad_id=vocab.id(PAD), log=log)
    ckpt = Checkpoint(params=result.params, config=cfg, vocab=vocab,
                      step=result.steps, rtl_mode=True,
                      meta={"final_loss": result.final_loss})
    return ckpt, eval_eps


def banner(title: str):
    print(f"\n=== {title} " + "=" * max(0, 66 - len(title)))
