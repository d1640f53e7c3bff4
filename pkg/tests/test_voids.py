"""Void percentages against the boolean-grid brute force."""

import numpy as np
import pytest

from stepscope import metrics as M

from oracles import bruteforce_voids, random_void_trace


def _index(voids):
    return {(v.rank, v.step): v for v in voids}


@pytest.mark.parametrize("seed", range(8))
def test_randomized_steps_match_bruteforce(seed):
    rng = np.random.default_rng(1000 + seed)
    timelines = random_void_trace(rng)
    got = _index(M.void_percentages(timelines))
    want = bruteforce_voids(timelines)
    assert len(want) == len(got)
    for rank, step, t_step, t_inter, t_minority in want:
        v = got[(rank, step)]
        assert v.t_step_us == t_step
        assert v.t_inter_us == t_inter
        assert v.t_minority_us == t_minority


def test_simulated_run_matches_bruteforce(small_out):
    got = _index(M.void_percentages(small_out.timelines))
    want = bruteforce_voids(small_out.timelines)
    assert len(want) == len(got)
    for rank, step, t_step, t_inter, t_minority in want:
        v = got[(rank, step)]
        assert v.t_inter_us == t_inter
        assert v.t_minority_us == t_minority
        # the ratio forms divide the same integers
        assert v.v_inter == pytest.approx(t_inter / t_step, rel=1e-12)
        denom = t_step - t_inter
        assert v.v_minority == pytest.approx(t_minority / denom, rel=1e-12)


def test_fully_covered_window_has_no_minority_void(small_out):
    # healthy tp=1 schedule has no uninstrumented kernels at all only if
    # minority_gap_us is zero; here gaps exist, so voids must be > 0
    voids = M.void_percentages(small_out.timelines)
    assert all(v.t_minority_us > 0 for v in voids)
    assert all(0.0 <= v.v_minority <= 1.0 for v in voids)
    assert all(0.0 <= v.v_inter <= 1.0 for v in voids)


def test_void_medians_keyed_by_rank(small_out):
    med = M.void_medians(M.void_percentages(small_out.timelines))
    assert sorted(med) == list(range(4))
    for vi, vm in med.values():
        assert 0.0 <= vi <= 1.0
        assert 0.0 <= vm <= 1.0
