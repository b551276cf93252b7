"""Training loop: class-balanced down-sampled batches, NLL + SGD, early
stopping with patience under two macro-F1 criteria, and random restarts with
best-on-dev selection.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import Label, NUM_CLASSES
from .encoder_input import EncodedExample, pad_batch
from .metrics import MetricsReport, metrics_report
from .net import GradientError, ModelConfig, ModelParams, init_params, loss_and_grad, predict, sgd_step


class StoppingCriterion(Enum):
    MACRO_F1_ALL = "macro_f1_all"
    MACRO_F1_POS = "macro_f1_pos"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 40
    patience: int = 10
    num_restarts: int = 20
    stopping_criterion: StoppingCriterion = StoppingCriterion.MACRO_F1_POS
    learning_rate: float = 1e-3
    master_seed: int = 0

    def __post_init__(self):
        if self.batch_size < NUM_CLASSES:
            raise ValueError(
                f"batch_size {self.batch_size} smaller than the class count {NUM_CLASSES}; "
                "balanced sampling would be meaningless"
            )
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("patience must satisfy 0 < patience < max_epochs")
        if self.num_restarts < 1:
            raise ValueError("num_restarts must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    criterion_score: float
    dev_report: MetricsReport


@dataclass
class TrainHistory:
    criterion: StoppingCriterion
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0

    @property
    def scores(self) -> list[float]:
        return [r.criterion_score for r in self.records]

    @property
    def best_score(self) -> float:
        return self.records[self.best_epoch - 1].criterion_score


class TrainingDivergedError(RuntimeError):
    """Training aborted on a non-finite loss or gradient; carries the partial
    history accumulated so far."""

    def __init__(self, message: str, history: TrainHistory):
        super().__init__(message)
        self.history = history


def criterion_score(report: MetricsReport, criterion: StoppingCriterion) -> float:
    if criterion is StoppingCriterion.MACRO_F1_ALL:
        return report.macro_all.f1
    return report.macro_pos.f1


def make_balanced_batches(
    dataset: Sequence[EncodedExample],
    batch_size: int,
    rng: np.random.Generator,
):
    """Yield ceil(len/batch_size) batches with classes represented equally on
    average: each slot picks a class uniformly among those present, then an
    instance of that class uniformly with replacement."""
    if len(dataset) == 0:
        raise ValueError("cannot sample batches from an empty dataset")
    by_class: dict[int, list[int]] = {}
    for idx, ex in enumerate(dataset):
        if ex.label is None:
            raise ValueError("balanced sampling requires labeled examples")
        by_class.setdefault(int(ex.label), []).append(idx)
    classes = sorted(by_class)
    n_batches = math.ceil(len(dataset) / batch_size)
    for _ in range(n_batches):
        chosen_classes = rng.integers(0, len(classes), size=batch_size)
        batch = []
        for c in chosen_classes:
            pool = by_class[classes[c]]
            batch.append(dataset[pool[rng.integers(0, len(pool))]])
        yield batch


def early_stop_check(
    scores: Sequence[float],
    patience: int = 10,
    max_epochs: int = 40,
) -> bool:
    """True when training should stop after the last recorded epoch.

    Stops at the epoch cap, or when the last ``patience`` epochs all failed to
    strictly exceed the best score seen before them.
    """
    if not scores:
        raise ValueError("need at least one epoch score")
    if len(scores) >= max_epochs:
        return True
    best = -math.inf
    best_epoch = 0
    for epoch, s in enumerate(scores, start=1):
        if s > best:
            best = s
            best_epoch = epoch
    return len(scores) - best_epoch >= patience


def evaluate_dev(
    params: ModelParams,
    dev_data: Sequence[EncodedExample],
    batch_size: int,
    pad_id: int = 0,
) -> tuple[list[Label], MetricsReport]:
    """Predict every dev instance exactly once (no balancing, no sampling)."""
    preds: list[Label] = []
    for lo in range(0, len(dev_data), batch_size):
        preds.extend(predict(params, dev_data[lo : lo + batch_size], pad_id=pad_id))
    golds = [ex.label for ex in dev_data]
    if any(g is None for g in golds):
        raise ValueError("dev data must be labeled")
    return preds, metrics_report(preds, golds)


def train_one(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    train_data: Sequence[EncodedExample],
    dev_data: Sequence[EncodedExample],
    seed: int,
    pad_id: int = 0,
) -> tuple[ModelParams, TrainHistory]:
    """One training run; returns the parameters from the best dev epoch.

    Deterministic in (configs, data, seed): initialization uses ``seed``
    directly and batch sampling uses a stream derived from it.
    """
    if len(dev_data) == 0:
        raise ValueError("dev set must be non-empty")
    params = init_params(model_cfg, seed)
    batch_rng = np.random.default_rng([seed, 1])
    dropout_rng = np.random.default_rng([seed, 2]) if model_cfg.dropout > 0 else None

    history = TrainHistory(criterion=cfg.stopping_criterion)
    best_params = params.copy()
    best_score = -math.inf
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for batch in make_balanced_batches(train_data, cfg.batch_size, batch_rng):
            try:
                loss, grads = loss_and_grad(
                    params, pad_batch(batch, pad_id=pad_id), dropout_rng=dropout_rng
                )
            except GradientError as exc:
                raise TrainingDivergedError(str(exc), history) from exc
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", history)
            sgd_step(params, grads, cfg.learning_rate)
            losses.append(loss)

        _, report = evaluate_dev(params, dev_data, cfg.batch_size, pad_id=pad_id)
        score = criterion_score(report, cfg.stopping_criterion)
        history.records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                criterion_score=score,
                dev_report=report,
            )
        )
        if score > best_score:
            best_score = score
            history.best_epoch = epoch
            best_params = params.copy()
        if early_stop_check(history.scores, cfg.patience, cfg.max_epochs):
            break
    history.stop_epoch = history.records[-1].epoch
    return best_params, history


@dataclass
class RestartResult:
    params: ModelParams
    history: TrainHistory
    restart_index: int
    all_scores: list[float]  # best dev score per restart; NaN where diverged


def run_restarts(
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    train_data: Sequence[EncodedExample],
    dev_data: Sequence[EncodedExample],
    pad_id: int = 0,
) -> RestartResult:
    """Restart i trains with seed master_seed + i; the restart with the highest
    dev criterion score wins, ties going to the lowest index."""
    best: RestartResult | None = None
    all_scores: list[float] = []
    for i in range(cfg.num_restarts):
        try:
            params, history = train_one(
                cfg, model_cfg, train_data, dev_data, seed=cfg.master_seed + i, pad_id=pad_id
            )
        except TrainingDivergedError:
            all_scores.append(math.nan)
            continue
        score = history.best_score
        all_scores.append(score)
        if best is None or score > best.history.best_score:
            best = RestartResult(params, history, restart_index=i, all_scores=[])
    if best is None:
        raise RuntimeError(f"all {cfg.num_restarts} restarts diverged")
    best.all_scores = all_scores
    return best


def write_train_log(
    history: TrainHistory,
    path: str | Path,
    restart_index: int = 0,
) -> None:
    """One line per epoch plus a final summary line."""
    with Path(path).open("w", encoding="utf-8") as fh:
        name = history.criterion.value
        for r in history.records:
            rep = r.dev_report
            fh.write(
                f"epoch\t{r.epoch}\ttrain_loss\t{r.train_loss:.6f}"
                f"\tcriterion\t{name}\tscore\t{r.criterion_score:.6f}"
                f"\tmicro_all_f1\t{rep.micro_all.f1:.6f}"
                f"\tmacro_all_f1\t{rep.macro_all.f1:.6f}"
                f"\tmicro_pos_f1\t{rep.micro_pos.f1:.6f}"
                f"\tmacro_pos_f1\t{rep.macro_pos.f1:.6f}\n"
            )
        fh.write(
            f"best_epoch\t{history.best_epoch}\tstop_epoch\t{history.stop_epoch}"
            f"\trestart_index\t{restart_index}\n"
        )
