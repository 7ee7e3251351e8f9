import io

import numpy as np
import pytest

from dekt.data import parse_interactions, write_interactions
from dekt.simulate import SyntheticProfile, simulate


def _csv(profile):
    buf = io.StringIO()
    write_interactions(simulate(profile), buf)
    return buf.getvalue()


def test_record_count():
    assert len(simulate(SyntheticProfile(students=2, length=3))) == 6


def test_same_seed_same_bytes():
    p = SyntheticProfile(students=5, length=10, seed=7)
    assert _csv(p) == _csv(p)
    assert _csv(p) != _csv(SyntheticProfile(students=5, length=10, seed=8))


def test_output_parses_back_unchanged():
    recs = simulate(SyntheticProfile(students=4, length=12, seed=3))
    buf = io.StringIO()
    write_interactions(recs, buf)
    assert parse_interactions(buf.getvalue()) == recs


def test_emotionless_profile():
    recs = simulate(SyntheticProfile(students=3, length=4, with_emotions=False))
    assert all(r.emotions is None for r in recs)


def test_invalid_profiles():
    with pytest.raises(ValueError):
        simulate(SyntheticProfile(inertia=1.0))
    with pytest.raises(ValueError):
        simulate(SyntheticProfile(coupling=-1.0))


def _concentration_correctness(coupling, seed=0):
    recs = simulate(SyntheticProfile(students=400, length=50, coupling=coupling, seed=seed))
    conc = np.array([r.emotions[0] for r in recs])
    correct = np.array([r.correct for r in recs], dtype=float)
    return np.corrcoef(conc, correct)[0, 1], len(recs)


def test_coupling_links_emotion_and_correctness():
    corr, n = _concentration_correctness(2.0)
    assert n >= 10_000
    assert corr > 0.05


def test_no_coupling_decorrelates_concentration_and_correctness():
    corr, _ = _concentration_correctness(0.0)
    assert abs(corr) < 0.03
