import numpy as np
import pytest
from hypothesis import given, strategies as st

from volterrajump.rng import STREAM_CLOCK, STREAM_MARKS, GridSpec, SeedSpec


@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 10 ** 6), st.integers(0, 3))
def test_streams_are_reproducible(master, index, stream):
    a = SeedSpec(master, index).generator(stream).random(4)
    b = SeedSpec(master, index).generator(stream).random(4)
    np.testing.assert_array_equal(a, b)


def test_streams_and_replicates_differ():
    s = SeedSpec(7, 3)
    assert s.generator(STREAM_CLOCK).random() != s.generator(STREAM_MARKS).random()
    assert s.generator(0).random() != s.replicate(4).generator(0).random()
    assert s.replicate(5) == SeedSpec(7, 5)
    assert s.to_json() == {"master": 7, "index": 3}


def test_invalid_seeds():
    with pytest.raises(ValueError):
        SeedSpec(-1)
    with pytest.raises(ValueError):
        SeedSpec(1, -2)


def test_grid():
    g = GridSpec(2.0, 8)
    assert g.h == 0.25
    np.testing.assert_allclose(g.times, np.arange(9) * 0.25)
    with pytest.raises(ValueError):
        GridSpec(0.0, 4)
    with pytest.raises(ValueError):
        GridSpec(1.0, 0)
