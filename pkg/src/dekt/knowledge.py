"""Knowledge-state boosting: learning unit, emotion-gated gain, forgetting.

The knowledge state is a (B, M, d_k) matrix with one row per concept;
q rows weight concepts for the current exercise.
"""

from __future__ import annotations

from .autodiff import Graph, Node


def compose_learning_unit(graph: Graph, P: dict[str, Node], e: Node, at: Node, a: Node, dropout: float = 0.0) -> Node:
    l = graph.linear(graph.concat([e, at, a]), P["W2"], P["b2"])
    return graph.dropout(l, dropout)


def related_state(graph: Graph, q: Node, h: Node) -> Node:
    """q-weighted sum of concept rows: (B, M) x (B, M, d) -> (B, d)."""
    B, M, d = h.shape
    return graph.reshape(graph.matmul(graph.reshape(q, (B, 1, M)), h), (B, d))


def emotion_boosted_gain(
    graph: Graph,
    P: dict[str, Node],
    l: Node,
    h_rel: Node,
    q: Node,
    cm: Node | None = None,
    mode: str = "emotion",
) -> tuple[Node, Node, dict[str, Node]]:
    """Returns (gain, gain spread over concepts, intermediates)."""
    lg = graph.tanh(graph.linear(graph.concat([l, h_rel]), P["W3"], P["b3"]))
    if mode == "emotion":
        if cm is None:
            raise ValueError("emotion mode needs the emotion embedding cm")
        gate = graph.sigmoid(graph.linear(graph.concat([cm, l, h_rel]), P["W5"], P["b5"]))
    elif mode == "baseline":
        gate = graph.sigmoid(graph.linear(graph.concat([l, h_rel]), P["W4"], P["b4"]))
    else:
        raise ValueError(f"unknown gain mode {mode!r}")
    dh = graph.mul(gate, graph.scale(graph.add(lg, graph.constant(1.0)), 0.5))
    B, d = dh.shape
    M = q.shape[-1]
    dh_tilde = graph.matmul(graph.reshape(q, (B, M, 1)), graph.reshape(dh, (B, 1, d)))
    return dh, dh_tilde, {"lg": lg, "gain_gate": gate}


def forget_update(
    graph: Graph, P: dict[str, Node], h: Node, dh: Node, dh_tilde: Node, it: Node
) -> tuple[Node, Node]:
    """Per-concept forget gate, then h' = spread gain + gate * h."""
    M = h.shape[1]
    x = graph.concat([h, graph.expand(dh, 1, M), graph.expand(it, 1, M)])
    forget = graph.sigmoid(graph.linear(x, P["W6"], P["b6"]))
    return graph.add(dh_tilde, graph.mul(forget, h)), forget
