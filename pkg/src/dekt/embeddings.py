"""Embedding tables, the four-emotion fusion layer, and parameter layout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node, seeded_init
from .data import EMOTIONS, discretize_emotions

VARIANTS = ("full", "no-embedding", "no-gain", "no-expression", "no-exercise", "no-interaction")
EMOTION_TABLES = tuple(f"emb_{e}" for e in EMOTIONS)
PAD = 0


@dataclass(frozen=True)
class ModelShape:
    """Sizes needed to lay out every parameter. Table sizes include padding row 0."""

    n_exercises: int
    n_answer_times: int
    n_interval_times: int
    n_concepts: int
    d_k: int = 128
    bins: int = 1000
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "no-embedding" and self.d_k < 4:
            raise ValueError("no-embedding variant needs d_k >= 4")

    @property
    def emotion_dim(self) -> int:
        return 4 if self.variant == "no-embedding" else self.d_k


def param_shapes(shape: ModelShape) -> dict[str, tuple[int, ...]]:
    d, c = shape.d_k, shape.emotion_dim
    out: dict[str, tuple[int, ...]] = {
        "emb_exercise": (shape.n_exercises, d),
        "emb_answer_time": (shape.n_answer_times, d),
        "emb_interval_time": (shape.n_interval_times, d),
        "emb_answer": (3, d),
    }
    if shape.variant != "no-embedding":
        for name in EMOTION_TABLES:
            out[name] = (shape.bins + 1, d)
        out["W1"], out["b1"] = (4 * d, d), (d,)
    out["W2"], out["b2"] = (3 * d, d), (d,)
    out["W3"], out["b3"] = (2 * d, d), (d,)
    if shape.variant == "no-gain":
        out["W4"], out["b4"] = (2 * d, d), (d,)
    else:
        out["W5"], out["b5"] = (c + 2 * d, d), (d,)
    out["W6"], out["b6"] = (3 * d, d), (d,)
    out["beta"] = (2,)
    out["W7"], out["b7"] = (2 * d + c, d), (d,)
    out["W8"], out["b8"] = (2 * d, d), (d,)
    out["W9"], out["b9"] = (2 * d, d), (d,)
    out["W10"], out["b10"] = (d, d), (d,)
    out["W11"], out["b11"] = (2 * d, d), (d,)
    out["W12"], out["b12"] = (2 * d, 1), (1,)
    out["W13"], out["b13"] = (d, 4), (4,)
    return out


def is_table(name: str) -> bool:
    return name.startswith("emb_")


def init_params(shape: ModelShape, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform init in +-sqrt(1/d_k); padding rows of every table start at zero."""
    bound = float(np.sqrt(1.0 / shape.d_k))
    params = {}
    for name, shp in param_shapes(shape).items():
        arr = seeded_init(shp, bound, rng)
        if is_table(name):
            arr[PAD] = 0.0
        params[name] = arr
    return params


def lookup(graph: Graph, table: Node, index) -> Node:
    return graph.gather(table, index, padding_idx=PAD)


def fuse_emotions(graph: Graph, P: dict[str, Node], conc: Node, bor: Node, conf: Node, fru: Node) -> Node:
    return graph.linear(graph.concat([conc, bor, conf, fru]), P["W1"], P["b1"])


def emotion_input(graph: Graph, P: dict[str, Node], bins: np.ndarray, values: np.ndarray, variant: str) -> Node:
    """cm_t from (B, 4) padded bin indices, or raw values for no-embedding."""
    if variant == "no-embedding":
        return graph.constant(values)
    embs = [lookup(graph, P[name], bins[:, i]) for i, name in enumerate(EMOTION_TABLES)]
    return fuse_emotions(graph, P, *embs)


def emotion_input_from_values(
    graph: Graph, P: dict[str, Node], values: np.ndarray, bins: int, variant: str = "full"
) -> Node:
    """cm_t from continuous emotion values (discretized, +1 padding offset)."""
    values = np.asarray(values, dtype=np.float64)
    return emotion_input(graph, P, discretize_emotions(values, bins) + 1, values, variant)
