"""Next-step emotion and response prediction, the per-step cell, and unrolling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Node
from .data import Batch
from .embeddings import VARIANTS, emotion_input, emotion_input_from_values, lookup
from .emotion import emotion_sensitive_embedding, emotional_gain, temporary_state, update_emotional_state
from .knowledge import compose_learning_unit, emotion_boosted_gain, forget_update, related_state

F0 = 0.5  # initial emotional state value


@dataclass
class DualState:
    h: Node  # (B, M, d)
    f: Node  # (B, d)


@dataclass
class StepInputs:
    exercise: np.ndarray
    answer_time: np.ndarray
    interval_time: np.ndarray
    answer: np.ndarray
    mask: np.ndarray
    next_exercise: np.ndarray | None = None

    @classmethod
    def from_batch(cls, batch: Batch, t: int) -> "StepInputs":
        nxt = batch.exercise[:, t + 1] if t + 1 < batch.length else None
        return cls(
            batch.exercise[:, t],
            batch.answer_time[:, t],
            batch.interval_time[:, t],
            batch.answer[:, t],
            batch.mask[:, t] > 0,
            nxt,
        )


@dataclass
class StepOutput:
    state: DualState
    y: Node | None
    g: Node | None
    trace: dict[str, Node] = field(default_factory=dict)


def initial_state(graph: Graph, batch_size: int, n_concepts: int, d_k: int) -> DualState:
    return DualState(
        graph.constant(np.zeros((batch_size, n_concepts, d_k))),
        graph.constant(np.full((batch_size, d_k), F0)),
    )


def predict_emotion(graph: Graph, P: dict[str, Node], f: Node, e_next: Node) -> Node:
    return graph.sigmoid(graph.linear(graph.concat([f, e_next]), P["W11"], P["b11"]))


def decode_emotion(graph: Graph, P: dict[str, Node], cm_pred: Node) -> Node:
    """(B, d) -> (B, 4): concentration, boredom, confusion, frustration."""
    return graph.sigmoid(graph.linear(cm_pred, P["W13"], P["b13"]))


def predict_response(
    graph: Graph,
    P: dict[str, Node],
    cm_pred: Node,
    e_next: Node,
    h: Node,
    q_next: Node,
    exercise_modulation: bool = True,
    state_modulation: bool = True,
) -> tuple[Node, dict[str, Node]]:
    h_rel = related_state(graph, q_next, h)
    em = graph.mul(cm_pred, e_next) if exercise_modulation else e_next
    hm = graph.mul(cm_pred, h_rel) if state_modulation else h_rel
    y = graph.sigmoid(graph.linear(graph.concat([em, hm]), P["W12"], P["b12"]))
    return graph.reshape(y, (y.shape[0],)), {"h_next_rel": h_rel}


def step(
    graph: Graph,
    P: dict[str, Node],
    state: DualState,
    x: StepInputs,
    cm: Node,
    qmatrix: np.ndarray,
    variant: str = "full",
    dropout: float = 0.0,
) -> StepOutput:
    """One DEKT step: update (h, f) from interaction t, then predict for t+1.

    Rows with ``x.mask`` false pass the state through unchanged. Prediction
    is skipped when ``x.next_exercise`` is None.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    e = lookup(graph, P["emb_exercise"], x.exercise)
    at = lookup(graph, P["emb_answer_time"], x.answer_time)
    it = lookup(graph, P["emb_interval_time"], x.interval_time)
    a = lookup(graph, P["emb_answer"], x.answer)
    q = graph.constant(qmatrix[x.exercise])

    # knowledge
    l = compose_learning_unit(graph, P, e, at, a, dropout)
    h_rel = related_state(graph, q, state.h)
    mode = "baseline" if variant == "no-gain" else "emotion"
    dh, dh_tilde, ktrace = emotion_boosted_gain(graph, P, l, h_rel, q, cm, mode)
    h_new, forget = forget_update(graph, P, state.h, dh, dh_tilde, it)

    # emotion
    es, alpha = emotion_sensitive_embedding(graph, P, cm, at, a)
    fp = temporary_state(graph, P, e, cm, es, dropout)
    df, etrace = emotional_gain(graph, P, fp, state.f)
    dh_rel = None if variant == "no-interaction" else related_state(graph, q, dh_tilde)
    f_new, w = update_emotional_state(graph, P, state.f, df, dh_rel)

    new_state = DualState(graph.select(x.mask, h_new, state.h), graph.select(x.mask, f_new, state.f))
    trace = {
        "dh": dh,
        "forget_gate": forget,
        "attention": alpha,
        "f_temp": fp,
        "df": df,
        "update_weight": w,
        "f_prev": state.f,
        "f_new": f_new,
        "h_rel": related_state(graph, q, new_state.h),
        **ktrace,
        **etrace,
    }
    if x.next_exercise is None:
        return StepOutput(new_state, None, None, trace)

    e_next = lookup(graph, P["emb_exercise"], x.next_exercise)
    q_next = graph.constant(qmatrix[x.next_exercise])
    cm_pred = predict_emotion(graph, P, new_state.f, e_next)
    g = decode_emotion(graph, P, cm_pred)
    y, ptrace = predict_response(
        graph,
        P,
        cm_pred,
        e_next,
        new_state.h,
        q_next,
        exercise_modulation=variant != "no-exercise",
        state_modulation=variant != "no-expression",
    )
    trace.update(ptrace, cm_pred=cm_pred)
    return StepOutput(new_state, y, g, trace)


@dataclass
class Unrolled:
    y: Node  # (B, L-1): prediction for step t+1 made at step t
    g: Node  # (B, L-1, 4)
    outputs: list[StepOutput]


def unroll(
    graph: Graph,
    P: dict[str, Node],
    batch: Batch,
    qmatrix: np.ndarray,
    variant: str = "full",
    dropout: float = 0.0,
    bins: int | None = None,
    self_loop_g0: np.ndarray | None = None,
) -> Unrolled:
    """Run the cell over a batch.

    With ``self_loop_g0`` the observed emotions are ignored: each step's
    emotion input is the previous step's predicted g (g0 at t=0), discretized
    and looked up in the emotion tables with gradients cut at that edge.
    """
    B, L = batch.exercise.shape
    n_concepts = qmatrix.shape[1]
    d_k = P["emb_exercise"].shape[1]
    state = initial_state(graph, B, n_concepts, d_k)
    prev_g = None if self_loop_g0 is None else np.asarray(self_loop_g0, dtype=np.float64)
    outputs = []
    for t in range(L):
        if prev_g is not None:
            cm = emotion_input_from_values(graph, P, prev_g, bins, variant)
        else:
            cm = emotion_input(graph, P, batch.emotion_bins[:, t], batch.emotion_values[:, t], variant)
        out = step(graph, P, state, StepInputs.from_batch(batch, t), cm, qmatrix, variant, dropout)
        outputs.append(out)
        state = out.state
        if prev_g is not None and out.g is not None:
            prev_g = out.g.value
    ys = [o.y for o in outputs if o.y is not None]
    gs = [o.g for o in outputs if o.g is not None]
    return Unrolled(graph.stack(ys, axis=1), graph.stack(gs, axis=1), outputs)
