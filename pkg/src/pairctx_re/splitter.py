"""Document-level train/dev splitting with distribution diagnostics.

The splitter searches random seeds for an 80/20 document split whose train and
dev label distributions are close in KL divergence, and provides the entropy /
KL helpers used to characterise class skew.
"""

from __future__ import annotations

import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Label, NUM_CLASSES, RelationInstance


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class LabelDistribution:
    """Probabilities over the five classes, indexed by Label code."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (NUM_CLASSES,):
            raise ValueError(f"expected {NUM_CLASSES} probabilities, got shape {p.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __getitem__(self, label: Label | int) -> float:
        return float(self.p[int(label)])

    @classmethod
    def from_counts(cls, counts: Sequence[float]) -> "LabelDistribution":
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise ValueError("cannot form a distribution from zero counts")
        return cls(counts / total)

    @classmethod
    def normalized(cls, values: Sequence[float]) -> "LabelDistribution":
        """Rescale arbitrary nonnegative weights (e.g. rounded published
        proportions that do not sum exactly to 1)."""
        return cls.from_counts(values)


def label_distribution(instances: Sequence[RelationInstance | Label]) -> LabelDistribution:
    """Empirical class distribution of a non-empty instance list."""
    if len(instances) == 0:
        raise SplitError("label distribution of an empty instance list is undefined")
    counts = np.zeros(NUM_CLASSES, dtype=np.float64)
    for item in instances:
        label = item.label if isinstance(item, RelationInstance) else item
        counts[int(label)] += 1
    return LabelDistribution.from_counts(counts)


def entropy_bits(d: LabelDistribution) -> float:
    """Shannon entropy in bits, with 0·log 0 = 0."""
    p = d.p[d.p > 0]
    return float(-(p * np.log2(p)).sum())


def kl_divergence_bits(p: LabelDistribution, q: LabelDistribution) -> float:
    """D(p || q) in bits; requires q > 0 wherever p > 0."""
    mask = p.p > 0
    if np.any(q.p[mask] == 0):
        bad = [Label(i).token for i in np.nonzero(mask & (q.p == 0))[0]]
        raise SplitError(f"infinite divergence: q has zero mass on {', '.join(bad)}")
    pm = p.p[mask]
    qm = q.p[mask]
    return float((pm * np.log2(pm / qm)).sum())


@dataclass(frozen=True)
class Split:
    train_doc_ids: frozenset[str]
    dev_doc_ids: frozenset[str]
    seed_used: int
    kl_bits: float


def _pooled_counts(doc_ids, doc_labels) -> np.ndarray:
    counts = np.zeros(NUM_CLASSES, dtype=np.float64)
    for doc_id in doc_ids:
        for item in doc_labels.get(doc_id, ()):
            label = item.label if isinstance(item, RelationInstance) else item
            counts[int(label)] += 1
    return counts


def split_corpus(
    doc_labels: Mapping[str, Sequence[Label | RelationInstance]],
    ratio: float = 0.8,
    max_seed_trials: int = 10_000,
    kl_threshold_bits: float = 0.02,
) -> Split:
    """Search seeds 0..max_seed_trials-1 for a document split with small KL.

    Each trial shuffles the (sorted) doc ids and takes the first
    floor(ratio * n) as train. A seed is rejected when either side ends up
    with no instances, or when a label present in train is absent from dev
    (which would make the divergence infinite). The first seed with
    D(train || dev) <= kl_threshold_bits wins; if none qualifies, the valid
    seed with minimal divergence is returned.
    """
    if not 0.0 < ratio < 1.0:
        raise SplitError(f"ratio must lie strictly between 0 and 1, got {ratio}")
    doc_ids = sorted(doc_labels)
    n = len(doc_ids)
    if n < 2:
        raise SplitError(f"need at least 2 documents to split, got {n}")
    n_train = int(math.floor(ratio * n + 1e-9))
    n_train = min(max(n_train, 1), n - 1)

    best: tuple[float, int, tuple[frozenset, frozenset]] | None = None
    for seed in range(max_seed_trials):
        rng = np.random.default_rng(seed)
        order = rng.permutation(n)
        train_ids = frozenset(doc_ids[i] for i in order[:n_train])
        dev_ids = frozenset(doc_ids[i] for i in order[n_train:])
        train_counts = _pooled_counts(train_ids, doc_labels)
        dev_counts = _pooled_counts(dev_ids, doc_labels)
        if train_counts.sum() == 0 or dev_counts.sum() == 0:
            continue
        if np.any((train_counts > 0) & (dev_counts == 0)):
            continue
        d = kl_divergence_bits(
            LabelDistribution.from_counts(train_counts),
            LabelDistribution.from_counts(dev_counts),
        )
        if d <= kl_threshold_bits:
            return Split(train_ids, dev_ids, seed_used=seed, kl_bits=d)
        if best is None or d < best[0]:
            best = (d, seed, (train_ids, dev_ids))

    if best is None:
        raise SplitError(
            f"no seed in 0..{max_seed_trials - 1} produced a finite train/dev divergence"
        )
    d, seed, (train_ids, dev_ids) = best
    return Split(train_ids, dev_ids, seed_used=seed, kl_bits=d)


def labels_by_doc(
    instances: Sequence[RelationInstance],
    all_doc_ids: Sequence[str] | None = None,
) -> dict[str, list[Label]]:
    """Group instance labels per document, optionally covering label-free docs."""
    grouped: dict[str, list[Label]] = {d: [] for d in (all_doc_ids or ())}
    for inst in instances:
        grouped.setdefault(inst.doc_id, []).append(inst.label)
    return grouped


_HEADER_RE = re.compile(r"^# seed_used=(\d+)\tkl_bits=([0-9.+-eE]+)$")


def write_split(split: Split, path: str | Path) -> None:
    """Manifest: a header with seed and divergence, then one doc id per line."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# seed_used={split.seed_used}\tkl_bits={split.kl_bits:.6f}\n")
        for doc_id in sorted(split.train_doc_ids):
            fh.write(f"train\t{doc_id}\n")
        for doc_id in sorted(split.dev_doc_ids):
            fh.write(f"dev\t{doc_id}\n")


def read_split(path: str | Path) -> Split:
    path = Path(path)
    train: set[str] = set()
    dev: set[str] = set()
    seed_used = -1
    kl_bits = float("nan")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            m = _HEADER_RE.match(line)
            if m:
                seed_used = int(m.group(1))
                kl_bits = float(m.group(2))
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[0] not in ("train", "dev"):
                raise SplitError(f"{path}:{lineno}: malformed split line {line!r}")
            (train if parts[0] == "train" else dev).add(parts[1])
    if seed_used < 0:
        raise SplitError(f"{path}: missing split header line")
    if train & dev:
        raise SplitError(f"{path}: doc ids assigned to both train and dev")
    return Split(frozenset(train), frozenset(dev), seed_used=seed_used, kl_bits=kl_bits)
