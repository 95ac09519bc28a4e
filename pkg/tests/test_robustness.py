# tests/test_robustness.py
import numpy as np
import orjson
import pytest

from src.core.robustness import eval_robustness, eval_satisfaction, robustness
from src.core.stl_formula import (
    NodeKind,
    Signal,
    StlError,
    StlFormula,
    WindowError,
    always,
    conj,
    eventually,
    linear_predicate,
    pred,
    until,
)

A = linear_predicate("a", [1.0, 0.0])
B = linear_predicate("b", [0.0, 1.0])


def brute_force(f: StlFormula, s: Signal, t: int) -> float:
    """Semántica cuantitativa recursiva, sin caché ni atajos."""
    kind = f.kind
    if kind is NodeKind.PRED:
        return f.predicate.eval(s.samples[t], s.anchors[t])
    if kind is NodeKind.NOT:
        return -brute_force(f.children[0], s, t)
    if kind is NodeKind.AND:
        return min(brute_force(c, s, t) for c in f.children)
    if kind is NodeKind.OR:
        return max(brute_force(c, s, t) for c in f.children)
    a, b = f.interval
    if kind is NodeKind.EVENTUALLY:
        return max(brute_force(f.children[0], s, k) for k in range(t + a, t + b + 1))
    if kind is NodeKind.ALWAYS:
        return min(brute_force(f.children[0], s, k) for k in range(t + a, t + b + 1))
    lhs, rhs = f.children
    return max(
        min([brute_force(rhs, s, k)] + [brute_force(lhs, s, j) for j in range(t, k + 1)])
        for k in range(t + a, t + b + 1)
    )


def test_robustness_matches_brute_force_and_sign_matches_satisfaction(stl_corpus):
    for f, s in stl_corpus:
        rho = robustness(f, s)
        assert rho == brute_force(f, s, 0)
        assert (rho >= 0.0) == eval_satisfaction(f, s)


def test_tree_root_equals_robustness(stl_corpus):
    for f, s in stl_corpus[:100]:
        tree = eval_robustness(f, s)
        assert tree.root == robustness(f, s)
        assert tree.nodes[0] is f


def test_always_and_eventually_on_known_signal():
    s = Signal(np.array([[0.3, -1.0], [0.1, 0.5], [0.2, 2.0], [-0.4, 0.0]]))
    assert robustness(always(0, 2, pred(A)), s) == pytest.approx(0.1)
    assert robustness(always(0, 3, pred(A)), s) == pytest.approx(-0.4)
    assert robustness(eventually(1, 3, pred(B)), s) == pytest.approx(2.0)
    assert robustness(conj(pred(A), pred(B)), s, t=1) == pytest.approx(0.1)


def test_until_requires_lhs_up_to_the_witness():
    # b se cumple en t=2, pero a falla en t=1
    s = Signal(np.array([[1.0, -1.0], [-0.5, -1.0], [1.0, 3.0]]))
    f = until(0, 2, pred(A), pred(B))
    assert robustness(f, s) == pytest.approx(-0.5)
    assert not eval_satisfaction(f, s)


def test_window_beyond_signal_is_rejected():
    s = Signal(np.zeros((5, 2)))
    with pytest.raises(WindowError):
        robustness(always(0, 5, pred(A)), s)
    with pytest.raises(WindowError):
        eval_satisfaction(eventually(2, 3, pred(A)), s, t=2)


def test_malformed_nodes_are_rejected():
    with pytest.raises(StlError):
        StlFormula(NodeKind.AND, (pred(A),))
    with pytest.raises(StlError):
        StlFormula(NodeKind.ALWAYS, (pred(A),))


def test_signal_rejects_non_finite_samples():
    with pytest.raises(ValueError):
        Signal(np.array([[0.0, np.nan]]))


def test_anchor_enters_world_frame_predicates():
    p = linear_predicate("world_x", [1.0, 0.0], 0.5, anchor_coeffs=[1.0, 0.0])
    s = Signal(np.array([[0.2, 0.0]]), anchors=np.array([[0.4, 0.0]]))
    assert robustness(pred(p), s) == pytest.approx(0.1)


def test_tree_json_lists_every_node():
    s = Signal(np.array([[0.3, -1.0], [0.1, 0.5], [0.2, 2.0]]))
    tree = eval_robustness(always(0, 2, conj(pred(A), pred(B))), s)
    payload = orjson.loads(tree.to_json())
    assert len(payload) == len(tree) == 4
    assert payload[0]["kind"] == "Always"
    # instante crítico del hijo: el mínimo está en t=0 (b = -1)
    assert payload[1]["t"] == 0
    assert payload[0]["rho"] == pytest.approx(-1.0)
