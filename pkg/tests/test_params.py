"""Dispatch constants and ramp-interval geometry."""

import math

import pytest

from rldispatch.params import (DispatchParams, clamp_to_interval,
                               feasible_interval)


def test_valid_construction_coerces_betas():
    p = DispatchParams(T=3, r_up=5.0, r_down=4.0, c=50.0, q=2000.0,
                       betas=(0.03, 0.1, 0.2, 0.4))
    assert p.betas == (0.03, 0.1, 0.2, 0.4)
    assert all(isinstance(b, float) for b in p.betas)


def test_penalty_ratio_validation():
    with pytest.raises(ValueError):
        DispatchParams(T=2, r_up=1.0, r_down=1.0, c=50.0, q=150.0)
    DispatchParams(T=2, r_up=1.0, r_down=1.0, c=50.0, q=150.01)


def test_field_validation():
    with pytest.raises(ValueError):
        DispatchParams(T=0, r_up=1.0, r_down=1.0)
    with pytest.raises(ValueError):
        DispatchParams(T=2, r_up=-1.0, r_down=1.0)
    with pytest.raises(ValueError):
        DispatchParams(T=2, r_up=1.0, r_down=1.0, betas=(0.03, 0.03))
    with pytest.raises(ValueError):
        DispatchParams(T=2, r_up=1.0, r_down=1.0, betas=(0.5, 0.03, 0.03, 0.03))
    with pytest.raises(ValueError):
        DispatchParams(T=2, r_up=1.0, r_down=1.0, betas=(0.0, 0.03, 0.03, 0.03))


def test_feasible_interval_cases():
    p = DispatchParams(T=2, r_up=3.0, r_down=4.0)
    assert feasible_interval(10.0, p) == (6.0, 13.0)
    p2 = DispatchParams(T=2, r_up=3.0, r_down=5.0)
    assert feasible_interval(2.0, p2) == (0.0, 5.0)
    p3 = DispatchParams(T=2, r_up=0.0, r_down=0.0)
    assert feasible_interval(0.0, p3) == (0.0, 0.0)
    lo, hi = feasible_interval(None, p)
    assert lo == 0.0 and hi == math.inf
    with pytest.raises(ValueError):
        feasible_interval(-1.0, p)


def test_feasible_interval_monotone_in_g_prev():
    p = DispatchParams(T=2, r_up=3.0, r_down=4.0)
    prev = [0.0, 1.0, 3.9, 4.0, 7.5, 20.0]
    intervals = [feasible_interval(g, p) for g in prev]
    for (lo_a, hi_a), (lo_b, hi_b) in zip(intervals, intervals[1:]):
        assert lo_b >= lo_a and hi_b >= hi_a


def test_clamp_to_interval():
    assert clamp_to_interval(12.0, 6.0, 13.0) == 12.0
    assert clamp_to_interval(4.0, 6.0, 13.0) == 6.0
    assert clamp_to_interval(20.0, 6.0, 13.0) == 13.0
    assert clamp_to_interval(clamp_to_interval(20.0, 6.0, 13.0), 6.0, 13.0) \
        == 13.0
    with pytest.raises(ValueError):
        clamp_to_interval(1.0, 2.0, 1.0)
