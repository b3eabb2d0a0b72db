"""Instance-level weighted blending of dialogue corpora.

A data instance is one agent turn (its context is implied by position). Each
dataset d_i gets a resolved training size

    size_i = round(w_i / sum(w) * pool)

computed in exact rational arithmetic, rounded half to even, then nudged by a
largest-remainder correction so the sizes sum to the pool exactly. Datasets
are over- or under-sampled to their resolved size and the combined stream is
shuffled globally.

Weights are parsed from decimal strings (or the shortest repr of a float), so
a configured 0.94 means exactly 94/100; no binary-float drift can move a
rounding boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .corpus import AGENT, PRTL, Episode

MSPD_PR = "mspd_pr"
MSPD_NPR = "mspd_npr"

OVERSAMPLE = "oversample"
UNDERSAMPLE = "undersample"
EXACT = "exact"


class BlendError(ValueError):
    """Invalid blend specification or unsatisfiable plan."""


@dataclass(frozen=True, order=True)
class InstanceRef:
    """Pointer to one agent turn in a named dataset."""

    dataset_id: str
    episode_id: str
    session_index: int
    turn_index: int

    def as_obj(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "episode_id": self.episode_id,
            "session_index": self.session_index,
            "turn_index": self.turn_index,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "InstanceRef":
        return cls(obj["dataset_id"], obj["episode_id"], obj["session_index"], obj["turn_index"])


def parse_weight(value) -> Fraction:
    """Exact rational weight from int, decimal string, Fraction, or float."""
    if isinstance(value, Fraction):
        w = value
    elif isinstance(value, int):
        w = Fraction(value)
    elif isinstance(value, float):
        w = Fraction(str(value))
    elif isinstance(value, str):
        try:
            w = Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise BlendError(f"unparseable weight {value!r}") from exc
    else:
        raise BlendError(f"unsupported weight type {type(value).__name__}")
    if w <= 0:
        raise BlendError(f"weight must be positive, got {value!r}")
    return w


@dataclass(frozen=True)
class BlendEntry:
    dataset_id: str
    weight: Fraction
    count: int


@dataclass(frozen=True)
class BlendSpec:
    """Named datasets with blending weights and their available counts."""

    entries: tuple[BlendEntry, ...]
    total_pool: int

    @classmethod
    def build(cls, rows, total_pool: int | None = None) -> "BlendSpec":
        """rows: iterable of (dataset_id, weight, count)."""
        entries = tuple(BlendEntry(d, parse_weight(w), int(c)) for d, w, c in rows)
        if not entries:
            raise BlendError("blend spec needs at least one dataset")
        ids = [e.dataset_id for e in entries]
        if len(set(ids)) != len(ids):
            raise BlendError("dataset ids must be unique")
        for e in entries:
            if e.count < 0:
                raise BlendError(f"negative instance count for {e.dataset_id}")
        pool = sum(e.count for e in entries)
        if total_pool is not None and total_pool != pool:
            raise BlendError(f"total_pool {total_pool} != sum of instance counts {pool}")
        return cls(entries=entries, total_pool=pool)


@dataclass(frozen=True)
class PlanEntry:
    dataset_id: str
    available: int
    target: int
    mode: str


@dataclass(frozen=True)
class BlendPlan:
    entries: tuple[PlanEntry, ...]
    total: int


def _round_half_even(q: Fraction) -> int:
    floor = q.numerator // q.denominator
    rem = q - floor
    half = Fraction(1, 2)
    if rem > half:
        return floor + 1
    if rem < half:
        return floor
    return floor if floor % 2 == 0 else floor + 1


def resolve_plan(spec: BlendSpec) -> BlendPlan:
    """Apportion the pool across datasets by normalized weight."""
    wsum = sum(e.weight for e in spec.entries)
    quotas = [e.weight / wsum * spec.total_pool for e in spec.entries]
    sizes = [_round_half_even(q) for q in quotas]
    residuals = [q - s for q, s in zip(quotas, sizes)]

    delta = spec.total_pool - sum(sizes)
    if delta > 0:
        for i in sorted(range(len(sizes)), key=lambda i: (-residuals[i], i))[:delta]:
            sizes[i] += 1
    elif delta < 0:
        for i in sorted(range(len(sizes)), key=lambda i: (residuals[i], i))[:-delta]:
            sizes[i] -= 1

    entries = []
    for e, size in zip(spec.entries, sizes):
        mode = EXACT if size == e.count else (OVERSAMPLE if size > e.count else UNDERSAMPLE)
        entries.append(PlanEntry(e.dataset_id, e.count, size, mode))
    return BlendPlan(entries=tuple(entries), total=spec.total_pool)


def materialize(
    plan: BlendPlan,
    instances: dict[str, list[InstanceRef]],
    rng_seed: int,
) -> list[InstanceRef]:
    """Sample each dataset to its target size and shuffle the union globally.

    Oversampling takes floor(target/available) full copies plus a uniform
    remainder without replacement; undersampling is a uniform sample without
    replacement. Deterministic given the seed.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([rng_seed])))
    stream: list[InstanceRef] = []
    for entry in plan.entries:
        pool = instances.get(entry.dataset_id)
        if pool is None:
            raise BlendError(f"no instances supplied for dataset {entry.dataset_id!r}")
        if len(pool) != entry.available:
            raise BlendError(
                f"dataset {entry.dataset_id!r} has {len(pool)} instances but the plan expects {entry.available}"
            )
        if entry.target == 0:
            continue
        if entry.available == 0:
            raise BlendError(f"dataset {entry.dataset_id!r} is empty but has target size {entry.target}")
        copies, rem = divmod(entry.target, entry.available)
        stream.extend(pool * copies)
        if rem:
            picked = rng.choice(entry.available, size=rem, replace=False)
            stream.extend(pool[i] for i in sorted(int(i) for i in picked))
    order = rng.permutation(len(stream))
    return [stream[i] for i in order]


# ---------------------------------------------------------------------------
# Instance collection

def collect_instances(episodes: list[Episode], dataset_id: str) -> list[InstanceRef]:
    """One InstanceRef per agent turn, in corpus order."""
    refs = []
    for ep in episodes:
        for s_idx, session in enumerate(ep.sessions):
            for t_idx, turn in enumerate(session.turns):
                if turn.speaker == AGENT:
                    refs.append(InstanceRef(dataset_id, ep.user_id, s_idx, t_idx))
    return refs


def split_mspd(
    episodes: list[Episode],
    pr_id: str = MSPD_PR,
    npr_id: str = MSPD_NPR,
) -> tuple[list[InstanceRef], list[InstanceRef]]:
    """Partition agent turns into personalized (PRTL) and casual (CRTL) instances."""
    pr: list[InstanceRef] = []
    npr: list[InstanceRef] = []
    for ep in episodes:
        for s_idx, session in enumerate(ep.sessions):
            for t_idx, turn in enumerate(session.turns):
                if turn.speaker != AGENT:
                    continue
                if turn.rtl == PRTL:
                    pr.append(InstanceRef(pr_id, ep.user_id, s_idx, t_idx))
                else:
                    npr.append(InstanceRef(npr_id, ep.user_id, s_idx, t_idx))
    return pr, npr


# ---------------------------------------------------------------------------
# Manifest IO

_MANIFEST_HEADER = "blend_manifest"
_INSTANCE_RECORD = "instance"


def write_manifest(
    refs: list[InstanceRef],
    plan: BlendPlan,
    rng_seed: int,
    path,
    extra_header: dict | None = None,
) -> None:
    header = {
        "record": _MANIFEST_HEADER,
        "seed": rng_seed,
        "shuffle": "global",
        "total": plan.total,
        "plan": [
            {"dataset_id": e.dataset_id, "available": e.available, "target": e.target, "mode": e.mode}
            for e in plan.entries
        ],
    }
    header.update(extra_header or {})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for ref in refs:
            obj = {"record": _INSTANCE_RECORD, **ref.as_obj()}
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def read_manifest(path) -> tuple[list[InstanceRef], dict]:
    refs: list[InstanceRef] = []
    header: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.get("record")
            if kind == _MANIFEST_HEADER:
                header = obj
            elif kind == _INSTANCE_RECORD:
                refs.append(InstanceRef.from_obj(obj))
            else:
                raise BlendError(f"{path}:{lineno}: unknown manifest record {kind!r}")
    return refs, header
