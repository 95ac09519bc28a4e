# tests/test_smooth_robustness.py
import numpy as np
import pytest

from src.core.robustness import robustness
from src.core.smooth_robustness import eval_smooth_robustness, smooth_max, smooth_min
from src.core.stl_formula import Signal, always, conj, disj, eventually, linear_predicate, negate, pred, until
from tests.conftest import CHANNEL_PREDICATES

GAINS = (1.0, 10.0, 100.0, 1000.0)


@pytest.mark.parametrize("k1", GAINS)
@pytest.mark.parametrize("k2", GAINS)
def test_smooth_never_exceeds_exact(stl_corpus, k1, k2):
    for f, s in stl_corpus[:150]:
        value, _, _ = eval_smooth_robustness(f, s, 0, k1, k2)
        assert value <= robustness(f, s) + 1e-9


@pytest.mark.slow
def test_smooth_soundness_on_full_corpus(stl_corpus):
    for k1 in GAINS:
        for k2 in GAINS:
            for f, s in stl_corpus:
                value, _, _ = eval_smooth_robustness(f, s, 0, k1, k2)
                assert value <= robustness(f, s) + 1e-9


def test_conjunction_gap_is_bounded_by_log_m_over_k():
    rng = np.random.default_rng(11)
    for m in range(2, 9):
        preds = [pred(linear_predicate(f"p{i}", np.eye(8)[i])) for i in range(m)]
        f = conj(*preds)
        for _ in range(50):
            s = Signal(rng.normal(size=(1, 8)))
            for k1 in GAINS:
                value, _, _ = eval_smooth_robustness(f, s, 0, k1, 10.0)
                gap = robustness(f, s) - value
                assert -1e-12 <= gap <= np.log(m) / k1 + 1e-9


def test_smooth_is_non_decreasing_in_gain_on_conjunctions():
    rng = np.random.default_rng(5)
    f = always(0, 4, conj(*(pred(p) for p in CHANNEL_PREDICATES)))
    for _ in range(30):
        s = Signal(rng.normal(0.0, 0.5, (5, 3)))
        values = [eval_smooth_robustness(f, s, 0, k, k)[0] for k in GAINS]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_smooth_operators_bound_the_exact_ones():
    values = np.array([0.3, -0.2, 0.7, 0.1])
    lo, w_min = smooth_min(values, 10.0)
    mean, w_max = smooth_max(values, 10.0)
    assert lo <= values.min()
    assert mean <= values.max()
    assert w_min.sum() == pytest.approx(1.0)
    assert np.all(w_min > 0.0)
    assert w_max.shape == values.shape


def test_negation_keeps_the_under_approximation():
    rng = np.random.default_rng(2)
    a, b, c = (pred(p) for p in CHANNEL_PREDICATES[:3])
    f = negate(disj(eventually(0, 3, a), always(1, 2, conj(b, c))))
    for _ in range(100):
        s = Signal(rng.normal(0.0, 0.5, (6, 3)))
        value, _, _ = eval_smooth_robustness(f, s, 0, 10.0, 10.0)
        assert value <= robustness(f, s) + 1e-12


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    a, b, c = (pred(p) for p in CHANNEL_PREDICATES[:3])
    f = conj(eventually(0, 3, disj(a, negate(b))), until(0, 2, c, a))
    s = Signal(rng.normal(0.0, 0.5, (6, 3)))
    value, gy, _ = eval_smooth_robustness(f, s, 0, 10.0, 10.0)
    h = 1e-6
    for k in range(6):
        for d in range(3):
            up = s.samples.copy()
            down = s.samples.copy()
            up[k, d] += h
            down[k, d] -= h
            fd = (eval_smooth_robustness(f, Signal(up), 0, 10.0, 10.0)[0] - eval_smooth_robustness(f, Signal(down), 0, 10.0, 10.0)[0]) / (2 * h)
            assert gy[k, d] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_anchor_gradient_is_returned():
    p = linear_predicate("world_y", [0.0, 1.0], 0.0, anchor_coeffs=[0.0, 1.0])
    s = Signal(np.array([[0.0, 0.1], [0.0, 0.3]]), anchors=np.array([[0.0, 0.2], [0.0, 0.2]]))
    value, gy, ga = eval_smooth_robustness(always(0, 1, pred(p)), s, 0, 50.0, 50.0)
    assert value < 0.3
    np.testing.assert_allclose(gy[:, 1], ga[:, 1])
    assert ga[:, 1].sum() == pytest.approx(1.0)


def test_non_positive_gains_are_rejected():
    s = Signal(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        eval_smooth_robustness(pred(CHANNEL_PREDICATES[0]), s, 0, 0.0, 1.0)
