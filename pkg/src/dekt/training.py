"""Joint objective, Adam, training/evaluation loops, ablations and the bins sweep."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, NonFiniteError, backward
from .data import (
    Batch,
    InteractionRecord,
    StudentSequence,
    Vocabulary,
    build_qmatrix,
    build_sequences,
    has_emotions,
    split_folds,
)
from .embeddings import PAD, VARIANTS, ModelShape, init_params, is_table
from .metrics import MetricsReport, compute_metrics
from .predict import unroll

log = logging.getLogger(__name__)

PROB_CLIP = (1e-7, 1.0 - 1e-7)
DEFAULT_BINS_GRID = (10, 100, 1000, 2000, 3000, 4000, 5000)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    d_k: int = 128
    bins: int = 1000
    length: int = 100
    batch_size: int = 32
    epochs: int = 100
    lr: float = 0.002
    dropout: float = 0.2
    seed: int = 0
    variant: str = "full"
    folds: int = 5
    fold: int = 0
    val_fraction: float = 0.2
    patience: int = 5
    multi_hot: bool = False

    def validate(self) -> None:
        for name in ("d_k", "bins", "batch_size", "epochs", "folds", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.length < 2:
            raise ValueError("length must be >= 2")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not 0 <= self.fold < self.folds:
            raise ValueError(f"fold {self.fold} outside [0, {self.folds})")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    sequences: list[StudentSequence]
    vocab: Vocabulary
    qmatrix: np.ndarray
    has_emotions: bool

    def model_shape(self, d_k: int, variant: str = "full") -> ModelShape:
        sizes = self.vocab.sizes
        return ModelShape(
            n_exercises=sizes["exercise"],
            n_answer_times=sizes["answer_time"],
            n_interval_times=sizes["interval_time"],
            n_concepts=self.vocab.n_concepts,
            d_k=d_k,
            bins=self.vocab.bins,
            variant=variant,
        )

    def students(self) -> list[str]:
        return list(dict.fromkeys(s.student_id for s in self.sequences))

    def subset(self, students: Sequence[str]) -> list[StudentSequence]:
        keep = set(students)
        return [s for s in self.sequences if s.student_id in keep]


def prepare_dataset(
    records: Sequence[InteractionRecord],
    length: int,
    bins: int,
    multi_hot: bool = False,
    vocab: Vocabulary | None = None,
) -> Dataset:
    """Vocabulary over the whole log (unless given), sequences and Q-matrix."""
    vocab = vocab if vocab is not None else Vocabulary.build(records, bins)
    seqs = build_sequences(records, length, vocab, bins)
    return Dataset(seqs, vocab, build_qmatrix(records, vocab, multi_hot), has_emotions(records))


# ---------------------------------------------------------------------------
# objective


def joint_loss(
    graph: Graph,
    y: Node,
    answers: np.ndarray,
    g: Node | None,
    v: np.ndarray | None,
    mask: np.ndarray,
) -> tuple[Node, Node, Node | None]:
    """Mean cross-entropy over valid steps plus mean (over steps) emotion SSE.

    Valid entries are extracted in row-major order before any reduction, so
    extra padded steps cannot perturb the summation order.
    """
    mask = np.asarray(mask)
    if mask.shape != y.shape or np.shape(answers) != y.shape:
        raise ValueError(f"mask/answers shape {mask.shape} does not match predictions {y.shape}")
    idx = np.flatnonzero(mask.reshape(-1) > 0)
    if idx.size == 0:
        raise ValueError("no valid steps in batch")
    n = float(idx.size)
    a = np.asarray(answers, dtype=np.float64).reshape(-1)[idx]
    yv = graph.take(y, idx)
    ll = graph.add(
        graph.mul(graph.constant(a), graph.log(yv, PROB_CLIP)),
        graph.mul(graph.constant(1.0 - a), graph.log(graph.add(graph.scale(yv, -1.0), graph.constant(1.0)), PROB_CLIP)),
    )
    l1 = graph.scale(graph.reduce_sum(ll), -1.0 / n)
    if g is None:
        return l1, l1, None
    if g.shape != y.shape + (4,):
        raise ValueError(f"emotion predictions {g.shape} do not match {y.shape}")
    idx4 = (idx[:, None] * 4 + np.arange(4)).reshape(-1)
    vt = np.asarray(v, dtype=np.float64).reshape(-1)[idx4]
    diff = graph.add(graph.take(g, idx4), graph.constant(-vt))
    l2 = graph.scale(graph.reduce_sum(graph.mul(diff, diff)), 1.0 / n)
    return graph.add(l1, l2), l1, l2


def batch_targets(batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Targets aligned with unrolled predictions: (answers, emotions, mask) for steps 1..L-1."""
    return batch.answer[:, 1:] - 1, batch.emotion_values[:, 1:], batch.mask[:, 1:]


def batch_loss(
    graph: Graph,
    P: dict[str, Node],
    batch: Batch,
    qmatrix: np.ndarray,
    variant: str = "full",
    dropout: float = 0.0,
    with_emotion: bool = True,
    bins: int | None = None,
    self_loop_g0: np.ndarray | None = None,
) -> tuple[Node, Node, Node | None]:
    un = unroll(graph, P, batch, qmatrix, variant, dropout, bins=bins, self_loop_g0=self_loop_g0)
    answers, emotions, mask = batch_targets(batch)
    answers = np.where(mask > 0, answers, 0)
    if with_emotion:
        return joint_loss(graph, un.y, answers, un.g, emotions, mask)
    return joint_loss(graph, un.y, answers, None, None, mask)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class Adam:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], frozen: frozenset[str] = frozenset()):
        """In-place update of ``params``; names in ``frozen`` are left untouched."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            if name in frozen:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if is_table(name):
                params[name][PAD] = 0.0
        return params


# ---------------------------------------------------------------------------
# loops


def iter_batches(seqs: Sequence[StudentSequence], batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(len(seqs)) if order is None else order
    for start in range(0, len(idx), batch_size):
        yield Batch.from_sequences([seqs[i] for i in idx[start : start + batch_size]])


@dataclass
class Predictions:
    scores: np.ndarray
    labels: np.ndarray
    g: np.ndarray
    v: np.ndarray


def predict(
    params: dict[str, np.ndarray],
    seqs: Sequence[StudentSequence],
    qmatrix: np.ndarray,
    variant: str = "full",
    batch_size: int = 64,
    bins: int | None = None,
    g0: np.ndarray | None = None,
) -> Predictions:
    """Valid-step predictions in sequence order. ``g0`` (N, 4) switches on the self-loop."""
    scores, labels, gs, vs = [], [], [], []
    for k, batch in enumerate(iter_batches(seqs, batch_size)):
        graph = Graph(checked=False)
        P = graph.parameters(params)
        g0_b = None if g0 is None else g0[k * batch_size : k * batch_size + batch.size]
        un = unroll(graph, P, batch, qmatrix, variant, 0.0, bins=bins, self_loop_g0=g0_b)
        answers, emotions, mask = batch_targets(batch)
        sel = mask > 0
        scores.append(un.y.value[sel])
        labels.append(answers[sel])
        gs.append(un.g.value[sel])
        vs.append(emotions[sel])
    return Predictions(np.concatenate(scores), np.concatenate(labels), np.concatenate(gs), np.concatenate(vs))


def evaluate(
    params: dict[str, np.ndarray],
    seqs: Sequence[StudentSequence],
    qmatrix: np.ndarray,
    variant: str = "full",
    with_emotion: bool = True,
    batch_size: int = 64,
    bins: int | None = None,
    g0: np.ndarray | None = None,
) -> MetricsReport:
    pred = predict(params, seqs, qmatrix, variant, batch_size, bins, g0)
    if with_emotion:
        return compute_metrics(pred.scores, pred.labels, pred.g, pred.v)
    return compute_metrics(pred.scores, pred.labels)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    shape: ModelShape
    history: list[dict]
    best_epoch: int
    validation: MetricsReport
    test: MetricsReport
    frozen: frozenset[str] = frozenset()


def _rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def fit(
    config: TrainConfig,
    dataset: Dataset,
    params: dict[str, np.ndarray] | None = None,
    frozen: frozenset[str] = frozenset(),
    self_loop: bool = False,
) -> TrainResult:
    """Seeded mini-batch Adam on one fold, keeping the best-validation-AUC parameters.

    ``self_loop`` trains T-DEKT style: emotion inputs come from the model's
    own predictions seeded by a uniform g0 per sequence, and only the
    response loss is minimized.
    """
    config.validate()
    if not dataset.sequences:
        raise ValueError("empty dataset")
    shape = dataset.model_shape(config.d_k, config.variant)
    init_rng, shuffle_rng, dropout_rng, g0_rng = _rngs(config.seed, 4)
    if params is None:
        params = init_params(shape, init_rng)
    else:
        params = {k: v.copy() for k, v in params.items()}
    with_emotion = dataset.has_emotions and not self_loop

    fold = split_folds(dataset.students(), config.folds, config.val_fraction, config.seed)[config.fold]
    train_seqs = dataset.subset(fold.train)
    val_seqs = dataset.subset(fold.validation)
    test_seqs = dataset.subset(fold.test)

    def g0_for(seqs):
        return g0_rng.uniform(0.0, 1.0, size=(len(seqs), 4)) if self_loop else None

    val_g0, test_g0 = g0_for(val_seqs), g0_for(test_seqs)
    opt = Adam(lr=config.lr)
    history = []
    best = (-np.inf, 0, copy.deepcopy(params), None)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_seqs))
        g0_epoch = g0_for(train_seqs)
        losses, l1s, l2s = [], [], []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            chunk = order[start : start + config.batch_size]
            batch = Batch.from_sequences([train_seqs[i] for i in chunk])
            graph = Graph(rng=dropout_rng)
            P = graph.parameters(params)
            try:
                loss, l1, l2 = batch_loss(
                    graph,
                    P,
                    batch,
                    dataset.qmatrix,
                    config.variant,
                    config.dropout,
                    with_emotion,
                    bins=shape.bins,
                    self_loop_g0=None if g0_epoch is None else g0_epoch[chunk],
                )
                grads = backward(graph, loss)
                opt.step(params, grads, frozen)
            except (NonFiniteError, FloatingPointError) as exc:
                raise TrainingDiverged(f"diverged at epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(float(loss.value))
            l1s.append(float(l1.value))
            l2s.append(0.0 if l2 is None else float(l2.value))
        val = evaluate(params, val_seqs, dataset.qmatrix, config.variant, with_emotion, bins=shape.bins, g0=val_g0)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "train_l1": float(np.mean(l1s)),
                "train_l2": float(np.mean(l2s)),
                "val_auc": val.auc,
                "val_acc": val.acc,
                "val_rmse": val.rmse,
                "val_r2": val.r2,
            }
        )
        log.info("epoch %d loss %.5f val auc %s", epoch, history[-1]["train_loss"], val.auc)
        score = -np.inf if val.auc is None else val.auc
        if score > best[0] or best[3] is None:
            best = (score, epoch, copy.deepcopy(params), val)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    _, best_epoch, best_params, best_val = best
    test = evaluate(best_params, test_seqs, dataset.qmatrix, config.variant, with_emotion, bins=shape.bins, g0=test_g0)
    return TrainResult(best_params, shape, history, best_epoch, best_val, test, frozen)


def train(config: TrainConfig, dataset: Dataset) -> TrainResult:
    return fit(config, dataset)


def run_ablation(variant: str, config: TrainConfig, dataset: Dataset) -> MetricsReport:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    cfg = TrainConfig.from_dict({**config.to_dict(), "variant": variant})
    return fit(cfg, dataset).test


def sweep_bins(
    bins_list: Sequence[int], config: TrainConfig, records: Sequence[InteractionRecord]
) -> list[tuple[int, MetricsReport]]:
    """Retrain once per emotion discretization level."""
    if any(b < 1 for b in bins_list):
        raise ValueError("bins must all be >= 1")
    rows = []
    for bins in bins_list:
        cfg = TrainConfig.from_dict({**config.to_dict(), "bins": bins})
        ds = prepare_dataset(records, cfg.length, bins, cfg.multi_hot)
        rows.append((bins, fit(cfg, ds).test))
    return rows
