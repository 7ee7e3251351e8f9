"""Emotional-state tracing: emotion-sensitive embedding, gains and the state update."""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Node


def emotion_sensitive_embedding(graph: Graph, P: dict[str, Node], cm: Node, at: Node, a: Node) -> tuple[Node, Node]:
    """Attention of cm over the answer-time and answer embeddings.

    Scores are <cm, at> + beta[0] and <cm, a> + beta[1]. A raw 4-d emotion
    vector (no-embedding variant) is zero-padded to d_k for the scores.
    Returns (es, attention weights).
    """
    B, d = at.shape
    if cm.shape[-1] < d:
        cm = graph.concat([cm, graph.constant(np.zeros((B, d - cm.shape[-1])))])
    factors = graph.reshape(graph.concat([at, a]), (B, 2, d))
    scores = graph.reshape(graph.matmul(factors, graph.reshape(cm, (B, d, 1))), (B, 2))
    alpha = graph.softmax(graph.add_bias(scores, P["beta"]))
    es = graph.matmul(graph.reshape(alpha, (B, 1, 2)), factors)
    return graph.reshape(es, (B, d)), alpha


def temporary_state(graph: Graph, P: dict[str, Node], e: Node, cm: Node, es: Node, dropout: float = 0.0) -> Node:
    fp = graph.sigmoid(graph.linear(graph.concat([e, cm, es]), P["W7"], P["b7"]))
    return graph.dropout(fp, dropout)


def emotional_gain(graph: Graph, P: dict[str, Node], fp: Node, f_prev: Node) -> tuple[Node, dict[str, Node]]:
    x = graph.concat([fp, f_prev])
    aec = graph.tanh(graph.linear(x, P["W8"], P["b8"]))
    gate = graph.sigmoid(graph.linear(x, P["W9"], P["b9"]))
    return graph.mul(aec, gate), {"aec": aec, "aec_gate": gate}


def update_emotional_state(
    graph: Graph, P: dict[str, Node], f_prev: Node, df: Node, dh_rel: Node | None
) -> tuple[Node, Node]:
    """Softmax mixing weights w, then f = w * df + (1 - w) * f_prev.

    ``dh_rel=None`` drops the knowledge-gain factor (no-interaction variant).
    """
    x = df if dh_rel is None else graph.mul(df, dh_rel)
    w = graph.softmax(graph.linear(x, P["W10"], P["b10"]))
    keep = graph.add(graph.scale(w, -1.0), graph.constant(1.0))
    return graph.add(graph.mul(w, df), graph.mul(keep, f_prev)), w
