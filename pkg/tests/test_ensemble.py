import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from metocal.ensemble import summarize_ensemble
from metocal.errors import DataError


def test_constant_ensemble():
    s = summarize_ensemble([2.0, 2.0, 2.0])
    assert s.mean == 2.0
    assert s.sd == 0.0
    assert s.size == 3


def test_two_point_sample_sd():
    s = summarize_ensemble([1.0, 3.0])
    assert s.mean == 2.0
    assert s.sd == pytest.approx(math.sqrt(2.0), rel=1e-15)


def test_too_few_members():
    with pytest.raises(DataError):
        summarize_ensemble([1.0])


def test_non_finite_member():
    with pytest.raises(DataError):
        summarize_ensemble([1.0, float("nan"), 2.0])


members_strategy = st.lists(
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=2, max_size=60
)


@given(members_strategy, st.randoms(use_true_random=False))
def test_permutation_invariance_bit_exact(members, rnd):
    shuffled = list(members)
    rnd.shuffle(shuffled)
    a = summarize_ensemble(members)
    b = summarize_ensemble(shuffled)
    assert a.mean == b.mean  # bit-exact, not approx
    assert a.sd == b.sd


@given(members_strategy, st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_translation(members, c):
    base = summarize_ensemble(members)
    shifted = summarize_ensemble([m + c for m in members])
    assert shifted.mean == pytest.approx(base.mean + c, rel=1e-12, abs=1e-9)
    assert shifted.sd == pytest.approx(base.sd, rel=1e-12, abs=1e-9)


def test_sd_zero_iff_all_equal():
    rng = np.random.default_rng(0)
    x = rng.normal(size=10)
    assert summarize_ensemble(x).sd > 0
    assert summarize_ensemble(np.full(10, 1.25)).sd == 0.0
