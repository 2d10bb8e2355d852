import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from usta.conf_filter import FilterConfig, filter as confidence, gate
from usta.raster import ChangeMap, ScalarMap


def loop_oracle(labels, w):
    h, wd = labels.shape
    r = (w - 1) // 2
    out = np.zeros((h, wd))
    for i in range(r, h - r):
        for j in range(r, wd - r):
            same = 0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    # XNOR of the two labels
                    same += int(not (labels[i + di, j + dj] ^ labels[i, j]))
            out[i, j] = same / (w * w)
    return out


def test_homogeneous_map():
    pc = confidence(ChangeMap(np.zeros((9, 9), dtype=np.uint8)), 3).data
    assert np.all(pc[1:-1, 1:-1] == 1.0)
    border = np.ones((9, 9), dtype=bool)
    border[1:-1, 1:-1] = False
    assert np.all(pc[border] == 0)


def test_isolated_pair_confidence():
    labels = np.zeros((3, 3), dtype=np.uint8)
    labels[1, 1] = labels[0, 2] = 1
    assert confidence(ChangeMap(labels), 3).data[1, 1] == pytest.approx(2 / 9)


@pytest.mark.parametrize("w", [3, 5, 7])
def test_random_map_matches_oracle(w):
    labels = (np.random.default_rng(w).random((16, 16)) < 0.4).astype(np.uint8)
    np.testing.assert_array_equal(confidence(ChangeMap(labels), w).data, loop_oracle(labels, w))


def test_map_smaller_than_window():
    assert not confidence(ChangeMap(np.ones((4, 6), dtype=np.uint8)), 5).data.any()


@pytest.mark.parametrize("w", [1, 2, 4, 0, -3, 3.5])
def test_bad_window(w):
    with pytest.raises(ValueError):
        confidence(ChangeMap(np.zeros((9, 9), dtype=np.uint8)), w)


def test_gate_examples():
    pc = ScalarMap(np.array([[0.2, 0.5, 0.8, 1.0]]))
    assert gate(pc, 0.5).data.tolist() == [[0, 0.5, 0.8, 1.0]]
    np.testing.assert_array_equal(gate(pc, 0.0).data, pc.data)
    assert gate(pc, 1.0).data.tolist() == [[0, 0, 0, 1.0]]
    with pytest.raises(ValueError):
        gate(pc, 1.5)


def test_filter_config_validation():
    FilterConfig(3, 0.0)
    with pytest.raises(ValueError):
        FilterConfig(4, 0.5)
    with pytest.raises(ValueError):
        FilterConfig(5, -0.1)


maps = st.tuples(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31), st.sampled_from([3, 5, 7, 9]))


@settings(max_examples=60, deadline=None)
@given(maps)
def test_filter_properties(args):
    h, wd, seed, w = args
    labels = (np.random.default_rng(seed).random((h, wd)) < 0.5).astype(np.uint8)
    cm = ChangeMap(labels)
    pc = confidence(cm, w).data
    counts = pc * w * w
    np.testing.assert_allclose(counts, np.round(counts), atol=1e-9)
    r = (w - 1) // 2
    interior = np.zeros((h, wd), dtype=bool)
    if h >= w and wd >= w:
        interior[r:h - r, r:wd - r] = True
    assert np.all(pc[~interior] == 0)
    assert np.all(pc[interior] >= 1 / (w * w))
    np.testing.assert_array_equal(confidence(cm.complement(), w).data, pc)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 1))
def test_gate_idempotent(seed, alpha):
    pc = ScalarMap(np.random.default_rng(seed).random((6, 6)))
    once = gate(pc, alpha)
    np.testing.assert_array_equal(gate(once, alpha).data, once.data)
