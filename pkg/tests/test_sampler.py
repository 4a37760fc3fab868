import math
import random

import numpy as np
import pytest

from disttrack.data import ZipfConfig, gen_zipfian
from disttrack.sampler import (
    PrioritySamplerCoordinator,
    PrioritySamplerSite,
    ProtocolViolation,
    SampleEstimate,
    WRSamplerCoordinator,
    WRSamplerSite,
    coord_ingest,
    default_sample_size,
    extract_estimate,
    priority_offer,
    wr_coord_ingest,
    wr_offer,
)


class FixedRng(random.Random):
    def __new__(cls, values):
        return super().__new__(cls, 0)

    def __init__(self, values):
        super().__init__(0)
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def run_wor(stream, s, seed, m=1):
    sites = [PrioritySamplerSite(random.Random(seed * 1000 + j)) for j in range(m)]
    coord = PrioritySamplerCoordinator(s)
    taus = []
    for i, (e, w) in enumerate(stream):
        msg = priority_offer(sites[i % m], e, w)
        if msg is not None:
            for t in coord_ingest(coord, msg):
                taus.append(t)
                for st in sites:
                    st.tau = t
    return coord, taus


class TestSite:
    def test_heavy_always_emitted(self):
        st = PrioritySamplerSite(random.Random(1), tau=4.0)
        assert all(st.offer(4.0) is not None for _ in range(500))

    def test_formula(self):
        st = PrioritySamplerSite(FixedRng([0.5, 0.5]), tau=4.0)
        assert st.offer(2.0) == 4.0
        st.tau = 4.5
        assert st.offer(2.0) is None

    def test_zero_draw_redrawn(self):
        st = PrioritySamplerSite(FixedRng([0.0, 0.25]))
        assert st.offer(1.0) == 4.0

    def test_emission_probability(self):
        st = PrioritySamplerSite(random.Random(7), tau=8.0)
        n, w = 10_000, 3.0
        hits = sum(st.offer(w) is not None for _ in range(n))
        p = w / 8.0
        assert abs(hits / n - p) <= 3 * math.sqrt(p * (1 - p) / n)

    def test_priority_offer_triple(self):
        out = priority_offer(PrioritySamplerSite(FixedRng([0.5])), "x", 3.0)
        assert out == ("x", 3.0, 6.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            PrioritySamplerSite(1).offer(0.0)


class TestCoordinator:
    def test_lower_queue_no_broadcast(self):
        c = PrioritySamplerCoordinator(2)
        assert c.ingest("a", 1.0, 1.5) == []
        assert len(c.lower) == 1 and not c.upper

    def test_sth_upper_arrival_doubles(self):
        c = PrioritySamplerCoordinator(3)
        assert c.ingest("a", 1.0, 2.5) == []
        assert c.ingest("b", 1.0, 10.0) == []
        assert c.ingest("c", 1.0, 3.0) == [2.0]
        assert c.tau == 2.0
        # 2.5 and 3.0 fall in (2, 4]; 10 stays upper
        assert sorted(e[0] for e in c.lower) == [2.5, 3.0]
        assert [e[0] for e in c.upper] == [10.0]

    def test_cascading_doubling(self):
        c = PrioritySamplerCoordinator(2)
        c.ingest("a", 1.0, 100.0)
        assert c.ingest("b", 1.0, 200.0) == [2.0, 4.0, 8.0, 16.0, 32.0, 64.0]

    def test_violation(self):
        c = PrioritySamplerCoordinator(2, tau=4.0)
        with pytest.raises(ProtocolViolation):
            c.ingest("a", 1.0, 3.0)

    def test_bad_sample_size(self):
        with pytest.raises(ValueError):
            PrioritySamplerCoordinator(0)

    def test_queue_invariants_and_threshold_sequence(self):
        rng = np.random.default_rng(3)
        stream = [(i, float(w)) for i, w in enumerate(rng.uniform(1, 1000, 5000))]
        coord, taus = run_wor(stream, 50, seed=3, m=4)
        assert taus == [2.0 ** (k + 1) for k in range(len(taus))]
        assert all(coord.tau <= e[0] <= 2 * coord.tau for e in coord.lower)
        assert all(e[0] > 2 * coord.tau for e in coord.upper)
        assert len(coord.upper) < 50

    def test_heavy_items_kept(self):
        rng = np.random.default_rng(4)
        stream = [(i, float(w)) for i, w in enumerate(rng.uniform(1, 1000, 3000))]
        coord, _ = run_wor(stream, 30, seed=4)
        kept = {e[2] for e in coord.lower + coord.upper}
        assert all(i in kept for i, w in stream if w >= coord.tau)

    def test_round_count(self):
        rng = np.random.default_rng(5)
        n, beta, s = 100_000, 1000.0, default_sample_size(0.05)
        stream = list(zip(range(n), rng.uniform(1, beta, n).tolist()))
        coord, _ = run_wor(stream, s, seed=5)
        assert coord.rounds <= 2 * math.log2(beta * n / s)


@pytest.fixture(scope="module")
def repeated_runs():
    rng = np.random.default_rng(6)
    w = rng.uniform(1, 1000, 4000)
    stream = list(zip(range(len(w)), w.tolist()))
    s = default_sample_size(0.1)
    return w.sum(), s, [run_wor(stream, s, seed=t, m=3)[0] for t in range(1000)]


class TestEstimate:
    def test_no_reweighting_when_all_heavy(self):
        c = PrioritySamplerCoordinator(10)
        for item, w, rho in [("a", 5.0, 6.0), ("b", 4.0, 5.0), ("c", 1.0, 1.5)]:
            c.ingest(item, w, rho)
        est = extract_estimate(c)
        assert est.rho_hat == 1.5
        assert est.total == 9.0
        assert {i: wb for i, _, wb in est.entries} == {"a": 5.0, "b": 4.0}

    def test_light_reweighted(self):
        c = PrioritySamplerCoordinator(10)
        for item, w, rho in [("a", 1.0, 8.0), ("b", 1.0, 3.0)]:
            c.ingest(item, w, rho)
        est = c.estimate()
        assert est.entries == [("a", 1.0, 3.0)]

    def test_empty(self):
        with pytest.raises(ValueError):
            PrioritySamplerCoordinator(3).estimate()

    def test_frequencies_group(self):
        est = SampleEstimate([("a", 1.0, 2.0), ("a", 1.0, 3.0), ("b", 1.0, 1.0)], 1.0)
        assert est.frequencies() == {"a": 5.0, "b": 1.0}
        assert est.frequencies(key=lambda x: "all") == {"all": 6.0}

    def test_unbiased_total(self, repeated_runs):
        total, _, coords = repeated_runs
        totals = [c.estimate().total for c in coords]
        se = np.std(totals, ddof=1) / math.sqrt(len(totals))
        assert abs(np.mean(totals) - total) <= 3 * se

    def test_fixed_size_subsample_unbiased(self, repeated_runs):
        total, s, coords = repeated_runs
        totals = [c.estimate(size=s - 1).total for c in coords]
        se = np.std(totals, ddof=1) / math.sqrt(len(totals))
        assert abs(np.mean(totals) - total) <= 3 * se

    def test_fixed_size_keeps_top(self):
        c = PrioritySamplerCoordinator(10)
        for item, w, rho in [("a", 1.0, 8.0), ("b", 1.0, 3.0), ("c", 2.0, 5.0)]:
            c.ingest(item, w, rho)
        est = c.estimate(size=1)
        assert est.entries == [("a", 1.0, 5.0)] and est.rho_hat == 5.0
        with pytest.raises(ValueError):
            c.estimate(size=3)

    def test_per_element_error_zipf(self):
        eps = 0.1
        s = default_sample_size(eps)
        zs = gen_zipfian(ZipfConfig(3000, universe=1000, beta=100.0, seed=11))
        stream = list(zip(zs.elements.tolist(), zs.weights.tolist()))
        truth = {}
        for e, w in stream:
            truth[e] = truth.get(e, 0.0) + w
        total = sum(truth.values())
        ok = 0
        for t in range(100):
            est = run_wor(stream, s, seed=100 + t, m=5)[0].estimate().frequencies()
            worst = max(abs(est.get(e, 0.0) - f) for e, f in truth.items())
            ok += worst <= eps * total
        assert ok >= 95


class TestWithReplacement:
    def test_all_samplers_take_heavy_item(self):
        st = WRSamplerSite(8, np.random.default_rng(0), tau=2.0)
        idx, pr = st.offer(5.0)
        assert list(idx) == list(range(8))
        assert np.all(pr >= 5.0)

    def test_draws_clear_threshold(self):
        st = WRSamplerSite(64, np.random.default_rng(1), tau=50.0)
        for _ in range(200):
            out = st.offer(3.0)
            if out is not None:
                idx, pr = out
                assert len(set(idx.tolist())) == len(idx)
                assert np.all(pr >= 50.0)

    def test_per_sampler_rate(self):
        st = WRSamplerSite(40, np.random.default_rng(2), tau=10.0)
        n = 5000
        hits = sum(len(o[0]) for o in (st.offer(2.0) for _ in range(n)) if o is not None)
        p = 0.2
        assert abs(hits / (n * 40) - p) <= 3 * math.sqrt(p * (1 - p) / (n * 40))

    def test_wr_offer_tuples(self):
        st = WRSamplerSite(3, np.random.default_rng(0))
        draws = wr_offer(st, "x", 2.0)
        assert [d[0] for d in draws] == [0, 1, 2] and all(d[1] == "x" for d in draws)

    def test_coordinator_top_two(self):
        c = WRSamplerCoordinator(2)
        c.ingest(0, np.array([0]), np.array([5.0]))
        c.ingest(1, np.array([0, 1]), np.array([7.0, 1.5]))
        c.ingest(2, np.array([0]), np.array([6.0]))
        assert c.rho1.tolist() == [7.0, 1.5]
        assert c.rho2.tolist() == [6.0, 0.0]
        assert c.item1.tolist() == [1, 1]

    def test_round_end_requires_every_sampler(self):
        c = WRSamplerCoordinator(2)
        assert c.ingest(0, np.array([0, 1]), np.array([10.0, 10.0])) == []
        assert c.ingest(1, np.array([0]), np.array([9.0])) == []
        assert c.ingest(2, np.array([1]), np.array([3.0])) == [2.0]

    def test_index_range(self):
        with pytest.raises(ProtocolViolation):
            WRSamplerCoordinator(2).ingest(0, np.array([2]), np.array([5.0]))

    def test_wr_coord_ingest_wrapper(self):
        c = WRSamplerCoordinator(2)
        wr_coord_ingest(c, 4, [(1, "x", 2.0, 3.0)])
        assert c.item1.tolist() == [-1, 4]

    def test_second_priority_unbiased(self):
        rng = np.random.default_rng(8)
        w = rng.uniform(1, 50, 200)
        means = []
        for t in range(300):
            site = WRSamplerSite(50, np.random.default_rng(1000 + t))
            coord = WRSamplerCoordinator(50)
            for i, x in enumerate(w.tolist()):
                out = site.offer(x)
                if out is not None:
                    for tau in coord.ingest(i, *out):
                        site.tau = tau
            means.append(coord.total_estimate())
        se = np.std(means, ddof=1) / math.sqrt(len(means))
        assert abs(np.mean(means) - w.sum()) <= 3 * se

    def test_single_sampler(self):
        site = WRSamplerSite(1, np.random.default_rng(3))
        coord = WRSamplerCoordinator(1)
        for i, x in enumerate([1.0, 2.0, 3.0]):
            out = site.offer(x)
            if out is not None:
                for tau in coord.ingest(i, *out):
                    site.tau = tau
        keys, each = coord.sample()
        assert keys.shape == (1,) and each == coord.rho2[0]
        assert sum(coord.frequencies().values()) == pytest.approx(each)
