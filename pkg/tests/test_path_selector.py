import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import glai.path_selector as selector
from glai.core_nn import Network, NetworkSpec, forward, init_network, relu_derivative
from glai.data_io import Dataset, split, synth_clusters
from glai.errors import InputError, ShapeError
from glai.path_selector import (
    ActivationPattern,
    PatternSet,
    capture_pattern,
    capture_patterns,
    convergence_trace,
    extend_patterns,
    pattern_diff,
)

from oracles import random_network


def tiny_net():
    return Network(
        NetworkSpec((1, 1, 1)),
        (np.array([[2.0]]), np.array([[3.0]])),
        (np.array([1.0]), np.array([0.5])),
    )


def test_capture_pattern_examples():
    net = tiny_net()
    assert capture_pattern(net, [1.0]).as_lists() == [[1]]
    assert capture_pattern(net, [-1.0]).as_lists() == [[0]]


def test_capture_pattern_zero_network_all_inactive():
    net = init_network(NetworkSpec((3, 4, 5, 2), 1))
    zero = Network(net.spec, tuple(np.zeros_like(w) for w in net.weights), tuple(np.zeros_like(b) for b in net.biases))
    pat = capture_pattern(zero, [0.3, -1.0, 2.0])
    assert all(not m.any() for m in pat.masks)


def test_capture_pattern_shape_error():
    with pytest.raises(ShapeError):
        capture_pattern(tiny_net(), [1.0, 2.0])


def test_capture_patterns_dataset():
    ds = Dataset(np.array([[1.0], [-1.0]]), [0, 0], 1)
    ps = capture_patterns(tiny_net(), ds)
    assert [p.as_lists() for p in ps] == [[[1]], [[0]]]
    assert ps.equals(capture_patterns(tiny_net(), ds))


def test_capture_patterns_empty_and_width():
    empty = Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), 1)
    assert len(capture_patterns(tiny_net(), empty)) == 0
    with pytest.raises(ShapeError):
        capture_patterns(tiny_net(), Dataset(np.zeros((2, 3)), [0, 0], 1))


def test_capture_matches_relu_derivative_bitwise():
    rng = np.random.default_rng(0)
    for sizes in [(3, 5, 2), (4, 6, 3, 2)]:
        net = random_network(rng, sizes)
        for _ in range(20):
            x = rng.normal(size=sizes[0])
            _, cache = forward(net, x)
            pat = capture_pattern(net, x)
            for m, z in zip(pat.masks, cache.pre_activations):
                np.testing.assert_array_equal(m, relu_derivative(z[0]).astype(bool))


def test_activation_pattern_validation():
    with pytest.raises(InputError):
        ActivationPattern((np.array([0, 2]),))
    with pytest.raises(InputError):
        ActivationPattern((np.array([1, 0]),)).check((2, 3, 2))


# -- pattern_diff ----------------------------------------------------------

def _set(rows):
    return PatternSet((2, 4, 2), [np.array(rows, dtype=bool)])


def test_pattern_diff_examples():
    a = _set([[1, 0, 1, 0], [0, 0, 1, 1]])
    assert pattern_diff(a, a) == 0.0
    assert pattern_diff(a, _set([[0, 1, 0, 1], [1, 1, 0, 0]])) == 1.0
    assert pattern_diff(a, _set([[1, 0, 1, 0], [0, 0, 1, 0]])) == 0.125


def test_pattern_diff_mismatch():
    a = _set([[1, 0, 1, 0]])
    with pytest.raises(InputError):
        pattern_diff(a, _set([[1, 0, 1, 0], [0, 0, 0, 0]]))
    with pytest.raises(InputError):
        pattern_diff(a, PatternSet((2, 4, 3), [np.zeros((1, 4), dtype=bool)]))


@st.composite
def three_sets(draw):
    n = draw(st.integers(1, 6))
    hidden = draw(st.lists(st.integers(1, 5), min_size=1, max_size=3))
    sizes = (2, *hidden, 2)

    def one():
        return PatternSet(sizes, [
            np.array(draw(st.lists(st.lists(st.booleans(), min_size=h, max_size=h), min_size=n, max_size=n)), dtype=bool)
            for h in hidden
        ])

    return one(), one(), one()


@settings(max_examples=100, deadline=None)
@given(three_sets())
def test_pattern_diff_is_pseudometric(sets):
    a, b, c = sets
    assert pattern_diff(a, a) == 0.0
    assert pattern_diff(a, b) == pattern_diff(b, a)
    assert pattern_diff(a, c) <= pattern_diff(a, b) + pattern_diff(b, c) + 1e-15
    assert 0.0 <= pattern_diff(a, b) <= 1.0


# -- extend_patterns -------------------------------------------------------

def test_extend_patterns_only_captures_new_samples(monkeypatch):
    net = init_network(NetworkSpec((3, 5, 4, 2), 2))
    data = synth_clusters(1, 2, 3, 20, 0.2)
    old, new = data.head(30), data.subset(np.arange(30, 40))
    ps_old = capture_patterns(net, old)
    before = ps_old.content_hash()

    seen = []
    real_forward = selector.forward

    def counting_forward(n, x):
        seen.append(np.atleast_2d(x).shape[0])
        return real_forward(n, x)

    monkeypatch.setattr(selector, "forward", counting_forward)
    ext = extend_patterns(net, ps_old, new)
    assert seen == [10]
    assert ps_old.content_hash() == before
    monkeypatch.undo()
    assert ext.equals(capture_patterns(net, old.concat(new)))


# -- convergence trace -----------------------------------------------------

@pytest.fixture(scope="module")
def cluster_task():
    data = synth_clusters(7, 2, 2, 200, 0.15)
    return split(data, 0.8, 1)


def test_trace_zero_lr(cluster_task):
    train, val = cluster_task
    rows = convergence_trace(NetworkSpec((2, 8, 2), 1), train, val, 4, 0.0, 16, 1)
    assert len(rows) == 4
    assert all(r.diff == 0.0 for r in rows)


def test_trace_deterministic(cluster_task):
    train, val = cluster_task
    a = convergence_trace(NetworkSpec((2, 8, 2), 1), train, val, 3, 0.05, 16, 1)
    b = convergence_trace(NetworkSpec((2, 8, 2), 1), train, val, 3, 0.05, 16, 1)
    assert [(r.diff, r.val_loss) for r in a] == [(r.diff, r.val_loss) for r in b]


def test_trace_stabilises(cluster_task):
    train, val = cluster_task
    rows = convergence_trace(NetworkSpec((2, 32, 16, 2), 1), train, val, 50, 0.05, 16, 1)
    assert len(rows) == 50
    diffs = [r.diff for r in rows]
    assert np.mean(diffs[-5:]) < np.mean(diffs[:5])


def test_trace_path_metric_small_net(cluster_task):
    train, val = cluster_task
    rows = convergence_trace(NetworkSpec((2, 4, 3, 2), 1), train, val, 3, 0.05, 16, 1, metric="path")
    assert len(rows) == 3 and all(0.0 <= r.diff <= 1.0 for r in rows)
    with pytest.raises(InputError):
        convergence_trace(NetworkSpec((2, 4, 2), 1), train, val, 1, 0.05, 16, 1, metric="bogus")
