"""Response and emotion prediction metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .data import EMOTIONS


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-statistic AUC with ties counted half; None for single-class labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_brute_force(scores, labels) -> float | None:
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    if not pos or not neg:
        return None
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


@dataclass
class MetricsReport:
    rmse: float
    auc: float | None
    acc: float
    r2: float | None
    emotion_rmse: dict[str, float] | None
    n_steps: int

    def to_json(self, variant: str | None = None, fold: int | None = None, epoch: int | None = None) -> dict:
        out = {"variant": variant, "fold": fold}
        if epoch is not None:
            out["epoch"] = epoch
        out.update({k: v for k, v in asdict(self).items()})
        return out


def compute_metrics(
    scores: np.ndarray,
    labels: np.ndarray,
    g_preds: np.ndarray | None = None,
    v_truth: np.ndarray | None = None,
    mask: np.ndarray | None = None,
) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if mask is not None:
        sel = np.asarray(mask) > 0
        scores, labels = scores[sel], labels[sel]
        if g_preds is not None:
            g_preds, v_truth = np.asarray(g_preds)[sel], np.asarray(v_truth)[sel]
    scores, labels = scores.reshape(-1), labels.reshape(-1)
    if scores.size == 0:
        raise ValueError("no evaluated steps")
    rmse = float(np.sqrt(np.mean((scores - labels) ** 2)))
    acc = float(np.mean((scores >= 0.5) == (labels > 0.5)))
    if np.std(scores) == 0 or np.std(labels) == 0:
        r2 = None
    else:
        r2 = float(np.corrcoef(scores, labels)[0, 1] ** 2)
    emo = None
    if g_preds is not None:
        err = np.sqrt(np.mean((np.asarray(g_preds).reshape(-1, 4) - np.asarray(v_truth).reshape(-1, 4)) ** 2, axis=0))
        emo = {name: float(v) for name, v in zip(EMOTIONS, err)}
        emo["mean"] = float(err.mean())
    return MetricsReport(rmse, auc_score(scores, labels), acc, r2, emo, int(scores.size))
