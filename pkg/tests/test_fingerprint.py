import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import ks_2samp

from phantomnet import dnp3
from phantomnet.fingerprint import (
    RESERVOIR_CAPACITY,
    EmptySample,
    NodeProfile,
    Reservoir,
    UnparseableFrame,
    ks_statistic,
    observe,
    sample_response_delay,
)

MASTER, OUT = 1, 10


def request(indices, tseq):
    return dnp3.encode_message(dnp3.read_request(indices, transport_seq=tseq), OUT, MASTER)


def response(values, tseq):
    frag = dnp3.encode_analog_response(values, transport_seq=tseq)
    return dnp3.encode_message(frag, MASTER, OUT, dnp3.CONTROL_FROM_OUTSTATION)


def exchange(profile, indices, values, t, delay, tseq=0):
    observe(profile, request(indices, tseq), "in", t)
    observe(profile, response(values, tseq), "out", t + delay)


def test_bounds_constant_and_minmax():
    p = NodeProfile("o0")
    exchange(p, [0], [42], 0.0, 0.01)
    assert (p.value_bounds[0].lo, p.value_bounds[0].hi) == (42, 42)
    q = NodeProfile("o1")
    for k, v in enumerate([1, 5, 3]):
        exchange(q, [2], [v], k, 0.01, tseq=k)
    assert (q.value_bounds[2].lo, q.value_bounds[2].hi) == (1, 5)
    assert q.value_bounds[2].count == 3


def test_unpaired_response_maps_positionally():
    p = NodeProfile("o0")
    observe(p, response([7, 8], 5), "out", 1.0)
    assert p.value_bounds[1].lo == 8
    assert not p.latency


def test_histogram_and_mix_totals():
    p = NodeProfile("o0")
    for k in range(20):
        exchange(p, [0, 1, 2], [k, k, k], k, 0.01, tseq=k % 64)
    assert sum(sum(h.values()) for h in p.length_hist.values()) == p.observations == 40
    assert p.class_mix == {"READ": 20, "RESPONSE": 20}
    assert len(p.latency["READ"]) == 20


def test_unparseable_leaves_profile_unchanged():
    p = NodeProfile("o0")
    exchange(p, [0], [1], 0.0, 0.01)
    before = p.to_dict()
    bad = bytearray(request([0], 1))
    bad[12] ^= 0xFF
    with pytest.raises(UnparseableFrame):
        observe(p, bytes(bad), "in", 1.0)
    assert p.to_dict() == before


def test_learned_delays_match_source_mean():
    rng = np.random.default_rng(5)
    p = NodeProfile("o0")
    for k in range(10_000):
        exchange(p, [0], [0], float(k), rng.uniform(0.005, 0.015), tseq=k % 64)
    res = p.latency["READ"]
    assert len(res) == RESERVOIR_CAPACITY and res.seen == 10_000
    draws = [sample_response_delay(p, "READ", rng) for _ in range(10_000)]
    assert abs(np.mean(draws) - 0.010) <= 0.0005


def test_sample_delay_bounds_and_fallback():
    rng = np.random.default_rng(0)
    p = NodeProfile("o0")
    exchange(p, [0], [0], 0.0, 0.010)
    for _ in range(1000):
        assert 0.0095 <= sample_response_delay(p, "READ", rng) <= 0.0105
        assert 0.0095 <= sample_response_delay(p, "OPERATE", rng) <= 0.0105
        assert 0.0095 <= sample_response_delay(None, "READ", rng) <= 0.0105


def test_sampled_delays_follow_reservoir():
    rng = np.random.default_rng(2)
    p = NodeProfile("o0")
    for k in range(3000):
        exchange(p, [0], [0], float(k), rng.uniform(0.005, 0.015), tseq=k % 64)
    draws = [sample_response_delay(p, "READ", rng) for _ in range(1000)]
    assert ks_statistic(draws, p.latency["READ"].values) <= 0.1


def test_ks_examples():
    assert ks_statistic([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_statistic([1, 2], [5, 6, 7]) == 1.0
    assert ks_statistic([1, 2, 3, 4], [3, 4, 5, 6]) == 0.5
    with pytest.raises(EmptySample):
        ks_statistic([], [1])


# only the statistic is compared; scipy's p-value path warns on tiny samples
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_ks_matches_scipy(a, b):
    assert ks_statistic(a, b) == pytest.approx(ks_2samp(a, b, method="asymp").statistic, abs=1e-12)


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=200))
def test_bounds_monotone(values):
    p = NodeProfile("o0")
    lo, hi = None, None
    for k, v in enumerate(values):
        observe(p, response([v], k % 64), "out", float(k))
        vb = p.value_bounds[0]
        if lo is not None:
            assert vb.lo <= lo and vb.hi >= hi
        lo, hi = vb.lo, vb.hi
    assert (lo, hi) == (min(values), max(values))


def test_reservoir_is_bounded_and_uniformish():
    r = Reservoir(capacity=100, seed=1)
    for v in range(10_000):
        r.add(v)
    assert len(r) == 100
    assert 3000 < np.mean(r.values) < 7000
