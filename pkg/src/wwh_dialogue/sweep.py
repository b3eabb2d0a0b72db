"""Configuration sweeps: train-and-evaluate grids over blending weights and
augmentation regimes.

Two canned grids mirror the experiments the package is built around:

* ``weight_sweep_rows`` varies the non-personalized split's blending weight
  upward while the personalized weight stays fixed — grounding tendency
  (corpus F1) should fall as casual data crowds out grounded turns;
* ``regime_rows`` compares the positive-only subset regime (k=1) against
  negative-attribute augmentation (k=5), and label generation against the
  no-label ablation.

Each row trains a fresh model from the same seeds on its own blended data
and is evaluated on a shared held-out set, so differences between rows come
from the data recipe, not initialization noise.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .augmentation import SAME_USER, AugmentConfig
from .blending import MSPD_NPR, MSPD_PR
from .corpus import Episode
from .evaluation import EvalReport, build_idf_table, evaluate_checkpoint
from .model import Checkpoint, ModelConfig, TrainConfig, save_checkpoint, train
from .pipeline import DataContext, assemble_instances, build_data_context, labeled_refs, prepare_dataset
from .vocab import PAD, Vocabulary, build_vocab


@dataclass(frozen=True)
class SweepRow:
    """One train-and-evaluate configuration."""

    name: str
    weights: dict[str, str]
    k: int = 5
    rtl_mode: bool = True
    negative_source: str = SAME_USER

    def __post_init__(self):
        if not self.name or any(c.isspace() for c in self.name):
            raise ValueError(f"row name must be non-empty and spaceless, got {self.name!r}")


@dataclass(frozen=True)
class SweepResult:
    row: SweepRow
    report: EvalReport
    train_size: int
    train_seconds: float


def weight_sweep_rows(casual_id: str) -> list[SweepRow]:
    """The blending-weight grid: NPR weight rises, PR stays fixed."""
    schedule = [
        ("0.94", "0.5", "0.1"),
        ("0.92", "0.5", "0.3"),
        ("0.90", "0.5", "0.5"),
        ("0.87", "0.5", "0.8"),
    ]
    return [
        SweepRow(
            name=f"npr-{npr}",
            weights={casual_id: casual, MSPD_PR: pr, MSPD_NPR: npr},
        )
        for casual, pr, npr in schedule
    ]


def regime_rows(casual_id: str) -> list[SweepRow]:
    """Subset-size and label-regime grid (k=1 vs k=5; labels on vs off)."""
    weights = {casual_id: "0.85", MSPD_PR: "0.7", MSPD_NPR: "0.8"}
    return [
        SweepRow(name="k1", weights=weights, k=1),
        SweepRow(name="k5", weights=weights, k=5),
        SweepRow(name="k5-nolabel", weights=weights, k=5, rtl_mode=False),
    ]


@dataclass(frozen=True)
class SweepSetup:
    """Shared data for every row: corpora, vocabulary, eval refs."""

    train_data: DataContext
    eval_data: DataContext
    eval_episodes: list[Episode]
    vocab: Vocabulary
    idf_texts: tuple[str, ...]


def build_sweep_setup(
    mspd_episodes: list[Episode],
    eval_episodes: list[Episode],
    casual: dict[str, list[Episode]] | None = None,
) -> SweepSetup:
    """Precompute the corpus-level pieces shared by all rows.

    The natural inputs are the two halves of ``split_holdout_sessions``:
    later sessions of the same users held out for evaluation. The two
    contexts are built independently (the halves share user ids), and the
    vocabulary covers both so the held-out set stays closed-vocabulary.
    """
    casual = casual or {}
    train_data = build_data_context(mspd_episodes, casual)
    eval_data = build_data_context(eval_episodes, casual)
    corpora = [mspd_episodes + eval_episodes, *casual.values()]
    vocab = build_vocab(corpora)
    idf_texts = tuple(a.text for ep in mspd_episodes for a in ep.persona_pool)
    return SweepSetup(
        train_data=train_data,
        eval_data=eval_data,
        eval_episodes=eval_episodes,
        vocab=vocab,
        idf_texts=idf_texts,
    )


def run_row(
    row: SweepRow,
    setup: SweepSetup,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    aug_seed: int = 0,
    blend_seed: int = 0,
    max_new_tokens: int = 24,
    log=None,
) -> tuple[SweepResult, Checkpoint]:
    """Train one configuration and evaluate it on the shared held-out set."""
    if model_cfg.vocab_size != len(setup.vocab):
        raise ValueError("model_cfg.vocab_size must match the sweep vocabulary")
    aug = AugmentConfig(k=row.k, negative_source=row.negative_source, rng_seed=aug_seed)
    prep = prepare_dataset(
        setup.train_data,
        row.weights,
        aug,
        blend_seed=blend_seed,
        vocab=setup.vocab,
        rtl_mode=row.rtl_mode,
        max_seq_len=model_cfg.max_seq_len,
    )
    started = time.monotonic()
    result = train(prep.instances, model_cfg, train_cfg, pad_id=setup.vocab.id(PAD), log=log)
    elapsed = time.monotonic() - started
    ckpt = Checkpoint(
        params=result.params,
        config=model_cfg,
        vocab=setup.vocab,
        step=result.steps,
        rtl_mode=row.rtl_mode,
        meta={"row": row.name},
    )
    eval_instances = assemble_instances(
        labeled_refs(setup.eval_episodes),
        setup.eval_data,
        aug,
        setup.vocab,
        rtl_mode=row.rtl_mode,
        max_seq_len=model_cfg.max_seq_len,
    )
    report = evaluate_checkpoint(
        ckpt,
        eval_instances,
        build_idf_table(setup.idf_texts),
        max_new_tokens=max_new_tokens,
    )
    report = replace(report, meta={**report.meta, "row": row.name})
    return (
        SweepResult(row=row, report=report, train_size=len(prep.instances), train_seconds=elapsed),
        ckpt,
    )


def run_sweep(
    rows: list[SweepRow],
    setup: SweepSetup,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir=None,
    aug_seed: int = 0,
    blend_seed: int = 0,
    max_new_tokens: int = 24,
    log=None,
) -> list[SweepResult]:
    """Run every row with identical seeds; optionally write reports and
    checkpoints under `out_dir`."""
    names = [r.name for r in rows]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate row names: {names}")
    results: list[SweepResult] = []
    for row in rows:
        result, ckpt = run_row(
            row,
            setup,
            model_cfg,
            train_cfg,
            aug_seed=aug_seed,
            blend_seed=blend_seed,
            max_new_tokens=max_new_tokens,
            log=log,
        )
        results.append(result)
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(out / f"{row.name}.ckpt", ckpt.params, ckpt.config, ckpt.vocab,
                            step=ckpt.step, rtl_mode=ckpt.rtl_mode, meta=ckpt.meta)
    if out_dir is not None:
        write_reports(results, out_dir)
    return results


def format_table(results: list[SweepResult]) -> str:
    """Aligned-column text table, one row per configuration."""
    headers = ["row", "k", "labels", "train_n", "ppl", "f1", "p_cover", "acc_prtl", "acc_crtl", "hard", "soft", "casual"]
    lines = [headers]
    for res in results:
        rep = res.report
        acc = rep.rtl_accuracy
        lines.append([
            res.row.name,
            str(res.row.k),
            "on" if res.row.rtl_mode else "off",
            str(res.train_size),
            f"{rep.ppl:.3f}",
            f"{rep.f1:.4f}",
            f"{rep.p_cover:.4f}",
            f"{acc['PRTL']:.3f}" if "PRTL" in acc else "-",
            f"{acc['CRTL']:.3f}" if "CRTL" in acc else "-",
            str(rep.grounding_counts["hard"]),
            str(rep.grounding_counts["soft"]),
            str(rep.grounding_counts["non_personalized"]),
        ])
    widths = [max(len(row[i]) for row in lines) for i in range(len(headers))]
    rendered = []
    for idx, row in enumerate(lines):
        rendered.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if idx == 0:
            rendered.append("  ".join("-" * w for w in widths))
    return "\n".join(rendered) + "\n"


def write_reports(results: list[SweepResult], out_dir) -> None:
    """Machine-readable reports (one JSON record per line) plus a text table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "reports.jsonl", "w", encoding="utf-8") as fh:
        for res in results:
            record = {
                "record": "sweep_row",
                "row": res.row.name,
                "weights": dict(res.row.weights),
                "k": res.row.k,
                "rtl_mode": res.row.rtl_mode,
                "train_size": res.train_size,
                "train_seconds": round(res.train_seconds, 3),
                "report": res.report.as_dict(),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    (out / "table.txt").write_text(format_table(results), encoding="utf-8")
