import numpy as np
import pytest

from dekt.autodiff import Graph
from dekt.data import Batch
from dekt.embeddings import EMOTION_TABLES, ModelShape, fuse_emotions, init_params, lookup, param_shapes
from dekt.emotion import emotion_sensitive_embedding, emotional_gain, temporary_state, update_emotional_state
from dekt.knowledge import compose_learning_unit, emotion_boosted_gain, forget_update, related_state
from dekt.predict import DualState, StepInputs, decode_emotion, predict_emotion, predict_response, step, unroll

from factory import random_instance
from reference import reference_unroll


def _c(g, x):
    return g.constant(np.atleast_2d(np.asarray(x, dtype=float)))


def _P(g, **arrays):
    return {k: g.constant(np.asarray(v, dtype=float)) for k, v in arrays.items()}


def test_param_shapes_follow_dimensions():
    s = param_shapes(ModelShape(11, 6, 7, 5, 128, 1000))
    assert s["W2"] == (384, 128)
    assert s["W1"] == (512, 128)
    assert s["W5"] == (384, 128)
    assert param_shapes(ModelShape(11, 6, 7, 5, 8, 10, "no-embedding"))["W5"] == (4 + 16, 8)
    assert s["W12"] == (256, 1) and s["W13"] == (128, 4)
    assert s["emb_concentration"] == (1001, 128)
    assert "W4" not in s
    assert "W4" in param_shapes(ModelShape(11, 6, 7, 5, 8, 10, "no-gain"))
    assert "emb_boredom" not in param_shapes(ModelShape(11, 6, 7, 5, 8, 10, "no-embedding"))


def test_init_zeroes_padding_rows():
    P = init_params(ModelShape(4, 3, 3, 2, 8, 10), np.random.default_rng(0))
    for name in ("emb_exercise", *EMOTION_TABLES):
        assert not P[name][0].any()
    assert np.abs(P["W2"]).max() <= np.sqrt(1 / 8)


# --- embeddings ------------------------------------------------------------


def test_lookup_rows():
    g = Graph()
    t = g.constant(np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 4.0]]))
    assert lookup(g, t, [2]).value.tolist() == [[3.0, 4.0]]
    assert lookup(g, t, [0]).value.tolist() == [[0.0, 0.0]]


def test_fuse_examples():
    g = Graph()
    zero = _P(g, W1=np.zeros((8, 2)), b1=np.zeros(2))
    embs = [_c(g, [0.3, 0.1])] * 4
    assert fuse_emotions(g, zero, *embs).value.tolist() == [[0.0, 0.0]]
    P = _P(g, W1=np.ones((4, 1)), b1=[0.5])
    cm = fuse_emotions(g, P, *(_c(g, [v]) for v in (0.1, 0.2, 0.3, 0.4)))
    assert cm.value[0, 0] == pytest.approx(1.5, abs=1e-12)


# --- knowledge -------------------------------------------------------------


def test_learning_unit():
    g = Graph()
    P = _P(g, W2=np.ones((3, 1)), b2=[0.1])
    l = compose_learning_unit(g, P, _c(g, [0.2]), _c(g, [0.3]), _c(g, [0.5]))
    assert l.value[0, 0] == pytest.approx(1.1, abs=1e-12)
    Z = _P(g, W2=np.zeros((6, 2)), b2=np.zeros(2))
    assert not compose_learning_unit(g, Z, *(_c(g, [0.0, 0.0]),) * 3).value.any()


def test_related_state():
    g = Graph()
    rows = np.array([[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]])
    h = g.constant(rows)
    assert related_state(g, _c(g, [0, 1, 0]), h).value.tolist() == [[3.0, 4.0]]
    assert related_state(g, _c(g, [0.5, 0.5, 0]), h).value.tolist() == [[2.0, 3.0]]
    assert not related_state(g, _c(g, [0.5, 0.5, 0]), g.constant(np.zeros((1, 3, 2)))).value.any()


def test_gain_all_zero_weights():
    g = Graph()
    d = 3
    P = _P(g, W3=np.zeros((2 * d, d)), b3=np.zeros(d), W5=np.zeros((2 + 2 * d, d)), b5=np.zeros(d))
    dh, dht, tr = emotion_boosted_gain(g, P, _c(g, [1, 2, 3]), _c(g, [0, 1, 0]), _c(g, [0, 1]), _c(g, [1, 1]))
    assert dh.value.tolist() == [[0.25] * 3]
    assert tr["gain_gate"].value.tolist() == [[0.5] * 3]


def test_gain_worked_example():
    g = Graph()
    P = _P(g, W3=np.ones((2, 1)), b3=[0.0], W5=np.ones((3, 1)), b5=[0.0])
    one = _c(g, [1.0])
    dh, _, tr = emotion_boosted_gain(g, P, one, one, one, one)
    assert tr["lg"].value[0, 0] == pytest.approx(0.964028, abs=1e-6)
    assert tr["gain_gate"].value[0, 0] == pytest.approx(0.952574, abs=1e-6)
    # 0.952574 * (0.964028 + 1) / 2
    assert dh.value[0, 0] == pytest.approx(0.935440, abs=1e-6)


def test_gain_spreads_to_one_hot_concept_only():
    g = Graph()
    d = 2
    rng = np.random.default_rng(0)
    P = _P(g, W3=rng.normal(size=(2 * d, d)), b3=np.zeros(d), W5=rng.normal(size=(3 * d, d)), b5=np.zeros(d))
    q = _c(g, [0, 0, 1, 0])
    _, dht, _ = emotion_boosted_gain(g, P, _c(g, [1, 2]), _c(g, [0.5, 0]), q, _c(g, [0.1, 0.2]))
    nz = np.abs(dht.value[0]).sum(axis=1) > 0
    assert nz.tolist() == [False, False, True, False]


def test_baseline_gain_ignores_emotion():
    g = Graph()
    d = 2
    P = _P(g, W3=np.ones((2 * d, d)), b3=np.zeros(d), W4=np.ones((2 * d, d)), b4=np.zeros(d))
    args = (_c(g, [0.1, 0.2]), _c(g, [0.3, 0.4]), _c(g, [1.0]))
    a, _, _ = emotion_boosted_gain(g, P, *args, cm=_c(g, [5.0, -5.0]), mode="baseline")
    b, _, _ = emotion_boosted_gain(g, P, *args, cm=None, mode="baseline")
    assert a.value.tolist() == b.value.tolist()


def test_forget_examples():
    g = Graph()
    P = _P(g, W6=np.ones((3, 1)), b6=[0.0])
    h = g.constant(np.array([[[2.0]]]))
    dh = _c(g, [0.3])
    dht = g.constant(np.array([[[0.3]]]))
    h_new, fg = forget_update(g, P, h, dh, dht, _c(g, [0.0]))
    assert fg.value[0, 0, 0] == pytest.approx(0.908877, abs=1e-6)
    assert h_new.value[0, 0, 0] == pytest.approx(2.117754, abs=1e-6)

    Z = _P(g, W6=np.zeros((6, 2)), b6=np.zeros(2))
    hv = np.arange(6.0).reshape(1, 3, 2)
    dtv = np.full((1, 3, 2), 0.1)
    out, _ = forget_update(g, Z, g.constant(hv), _c(g, [0.1, 0.1]), g.constant(dtv), _c(g, [1, 1]))
    assert np.allclose(out.value, dtv + 0.5 * hv)
    out0, _ = forget_update(g, Z, g.constant(np.zeros((1, 3, 2))), _c(g, [0.1, 0.1]), g.constant(dtv), _c(g, [1, 1]))
    assert np.array_equal(out0.value, dtv)


# --- emotion ---------------------------------------------------------------


def test_attention_examples():
    g = Graph()
    P = _P(g, beta=[0.0, 0.0])
    es, alpha = emotion_sensitive_embedding(g, P, _c(g, [1.0]), _c(g, [0.2]), _c(g, [0.6]))
    assert alpha.value[0] == pytest.approx([0.40131, 0.59869], abs=1e-5)
    assert es.value[0, 0] == pytest.approx(0.43948, abs=1e-5)

    at, a = _c(g, [0.2, -1.0]), _c(g, [0.6, 3.0])
    es, alpha = emotion_sensitive_embedding(g, _P(g, beta=[0.7, 0.7]), _c(g, [0.0, 0.0]), at, a)
    assert alpha.value.tolist() == [[0.5, 0.5]]
    assert np.allclose(es.value, (at.value + a.value) / 2)

    same = _c(g, [0.4, -0.2])
    es, _ = emotion_sensitive_embedding(g, _P(g, beta=[1.0, -2.0]), _c(g, [3.0, 1.0]), same, same)
    assert np.allclose(es.value, same.value, atol=1e-15)


def test_temporary_state():
    g = Graph()
    one = _c(g, [1.0])
    assert temporary_state(g, _P(g, W7=np.ones((3, 1)), b7=[-3.0]), one, one, one).value.tolist() == [[0.5]]
    Z = _P(g, W7=np.zeros((6, 2)), b7=np.zeros(2))
    x = _c(g, [4.0, -9.0])
    assert temporary_state(g, Z, x, x, x).value.tolist() == [[0.5, 0.5]]


def test_emotional_gain():
    g = Graph()
    one = _c(g, [1.0])
    df, _ = emotional_gain(g, _P(g, W8=np.ones((2, 1)), b8=[0.0], W9=np.ones((2, 1)), b9=[0.0]), one, one)
    assert df.value[0, 0] == pytest.approx(0.849112, abs=1e-6)
    Z = _P(g, W8=np.zeros((4, 2)), b8=np.zeros(2), W9=np.zeros((4, 2)), b9=np.zeros(2))
    df, tr = emotional_gain(g, Z, _c(g, [0.3, 0.1]), _c(g, [0.5, 0.5]))
    assert not df.value.any() and not tr["aec"].value.any()


def test_state_update_examples():
    g = Graph()
    f, w = update_emotional_state(g, _P(g, W10=[[2.0]], b10=[0.3]), _c(g, [0.1]), _c(g, [0.7]), _c(g, [0.2]))
    assert w.value.tolist() == [[1.0]] and f.value.tolist() == [[0.7]]

    P = _P(g, W10=np.zeros((2, 2)), b10=[np.log(3.0), 0.0])
    fp, df = np.array([0.2, 0.4]), np.array([0.8, -0.6])
    f, w = update_emotional_state(g, P, _c(g, fp), _c(g, df), None)
    assert w.value[0] == pytest.approx([0.75, 0.25], abs=1e-12)
    assert f.value[0] == pytest.approx([0.75 * df[0] + 0.25 * fp[0], 0.25 * df[1] + 0.75 * fp[1]], abs=1e-12)

    rng = np.random.default_rng(2)
    P = _P(g, W10=rng.normal(size=(3, 3)), b10=rng.normal(size=3))
    same = _c(g, [0.3, -0.1, 0.6])
    f, _ = update_emotional_state(g, P, same, same, _c(g, [1.0, 2.0, 3.0]))
    assert np.allclose(f.value, same.value, atol=1e-15)


# --- prediction ------------------------------------------------------------


def test_emotion_prediction_examples():
    g = Graph()
    cm = predict_emotion(g, _P(g, W11=np.ones((2, 1)), b11=[0.0]), _c(g, [1.0]), _c(g, [1.0]))
    assert cm.value[0, 0] == pytest.approx(0.880797, abs=1e-6)
    Z = _P(g, W11=np.zeros((4, 2)), b11=np.zeros(2))
    assert predict_emotion(g, Z, _c(g, [3, 1]), _c(g, [2, 2])).value.tolist() == [[0.5, 0.5]]
    gv = decode_emotion(g, _P(g, W13=np.ones((1, 4)), b13=np.zeros(4)), _c(g, [1.0])).value
    assert gv[0] == pytest.approx([0.731059] * 4, abs=1e-6)
    assert decode_emotion(g, _P(g, W13=np.zeros((2, 4)), b13=np.zeros(4)), _c(g, [1, 1])).value.tolist() == [[0.5] * 4]


def test_response_examples():
    g = Graph()
    P = _P(g, W12=np.ones((2, 1)), b12=[0.0])
    y, _ = predict_response(g, P, _c(g, [0.5]), _c(g, [1.0]), g.constant(np.array([[[2.0]]])), _c(g, [1.0]))
    assert y.value[0] == pytest.approx(0.817574, abs=1e-6)
    Z = _P(g, W12=np.zeros((4, 1)), b12=[0.0])
    y, _ = predict_response(g, Z, _c(g, [0.2, 0.9]), _c(g, [1, 1]), g.constant(np.ones((1, 2, 2))), _c(g, [1, 0]))
    assert y.value.tolist() == [0.5]


def test_identity_modulation_matches_bypass():
    rng = np.random.default_rng(4)
    g = Graph()
    P = _P(g, W12=rng.normal(size=(6, 1)), b12=[0.1])
    e, h, q = _c(g, rng.normal(size=3)), g.constant(rng.normal(size=(1, 2, 3))), _c(g, [0.3, 0.7])
    ones = _c(g, np.ones(3))
    full, _ = predict_response(g, P, ones, e, h, q)
    a, _ = predict_response(g, P, ones, e, h, q, exercise_modulation=False)
    b, _ = predict_response(g, P, ones, e, h, q, state_modulation=False)
    assert full.value.tolist() == a.value.tolist() == b.value.tolist()


# --- full step ---------------------------------------------------------------


def _zero_instance(variant="full"):
    rng = np.random.default_rng(0)
    params, shape, batch, q = random_instance(rng, d=4, variant=variant)
    return {k: np.zeros_like(v) for k, v in params.items()}, batch, q


@pytest.mark.parametrize("variant", ["full", "no-gain", "no-embedding"])
def test_all_zero_params_give_half(variant):
    params, batch, q = _zero_instance(variant)
    g = Graph()
    out = unroll(g, g.parameters(params), batch, q, variant)
    assert np.all(out.y.value == 0.5)
    assert np.all(out.g.value == 0.5)


def test_masked_step_passes_state_through():
    rng = np.random.default_rng(5)
    params, shape, batch, q = random_instance(rng, B=2, L=3, d=3, M=4)
    g = Graph()
    P = g.parameters(params)
    h0 = g.constant(rng.normal(size=(2, 4, 3)))
    f0 = g.constant(rng.uniform(size=(2, 3)))
    x = StepInputs.from_batch(batch, 0)
    x.mask = np.array([False, True])
    cm = g.constant(rng.normal(size=(2, 3)))
    out = step(g, P, DualState(h0, f0), x, cm, q)
    assert out.state.h.value[0].tobytes() == h0.value[0].tobytes()
    assert out.state.f.value[0].tobytes() == f0.value[0].tobytes()
    assert out.state.h.value[1].tobytes() != h0.value[1].tobytes()


VARIANTS = ["full", "no-embedding", "no-gain", "no-expression", "no-exercise", "no-interaction"]


@pytest.mark.parametrize("variant", VARIANTS)
def test_matches_reference(variant):
    rng = np.random.default_rng(len(variant))
    for i in range(5):
        params, _, batch, q = random_instance(rng, d=4 if variant == "no-embedding" else int(rng.integers(1, 5)), variant=variant, ragged=i % 2 == 1, multi_hot=i >= 3)
        g = Graph()
        out = unroll(g, g.parameters(params), batch, q, variant)
        ys, gs, _ = reference_unroll(params, batch, q, variant)
        assert np.max(np.abs(out.y.value - np.array(ys))) < 1e-9
        assert np.max(np.abs(out.g.value - np.array(gs))) < 1e-9


def test_unroll_shapes():
    rng = np.random.default_rng(1)
    params, _, batch, q = random_instance(rng, B=3, L=5, d=2, M=3)
    g = Graph()
    out = unroll(g, g.parameters(params), batch, q)
    assert out.y.shape == (3, 4) and out.g.shape == (3, 4, 4)
    assert len(out.outputs) == 5 and out.outputs[-1].y is None


def test_bounds_on_random_draws():
    # unit-scale weights: far larger ones saturate sigmoid/tanh to exactly 1.0 in float64
    rng = np.random.default_rng(9)
    for _ in range(30):
        params, _, batch, q = random_instance(rng, d=3)
        g = Graph()
        out = unroll(g, g.parameters(params), batch, q)
        for o in out.outputs:
            tr = o.trace
            assert np.all((tr["dh"].value >= 0) & (tr["dh"].value < 1))
            assert np.all(np.abs(tr["df"].value) < 1)
            lo = np.minimum(tr["f_prev"].value, tr["df"].value)
            hi = np.maximum(tr["f_prev"].value, tr["df"].value)
            f = tr["f_new"].value
            assert np.all((f >= lo) & (f <= hi))
            assert np.all(np.abs(tr["update_weight"].value.sum(-1) - 1) <= 1e-9)
        assert np.all((out.y.value > 0) & (out.y.value < 1))
        assert np.all((out.g.value > 0) & (out.g.value < 1))


def test_batch_padding_has_no_effect():
    rng = np.random.default_rng(11)
    params, _, batch, q = random_instance(rng, L=4, ragged=True)
    g = Graph()
    base = unroll(g, g.parameters(params), batch, q)
    padded = batch.padded(3)
    g2 = Graph()
    longer = unroll(g2, g2.parameters(params), padded, q)
    assert isinstance(padded, Batch)
    assert longer.y.value[:, :3].tobytes() == base.y.value.tobytes()
