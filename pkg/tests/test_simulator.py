import math

import pytest

from disttrack.data import ElementStream, ZipfConfig, gen_zipfian, synth_matrix
from disttrack.messages import Kind, Message, broadcast
from disttrack.simulator import SimConfig, Tally, budget_log, run_sim, sweep, sweep_csv


@pytest.fixture(scope="module")
def small_zipf():
    return gen_zipfian(ZipfConfig(20_000, seed=3))


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(m=0), dict(m=2.5), dict(eps=0.0), dict(eps=1.0), dict(phi=1.2), dict(beta=0.5),
         dict(protocol="zz"), dict(assignment="random"), dict(query_every=0), dict(repetitions=0)],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)

    def test_aliases_and_strict(self):
        cfg = SimConfig(protocol="P3", eps=0.06, strict=True)
        assert cfg.protocol == "p3wor" and cfg.protocol_eps == pytest.approx(0.01)
        assert cfg.resolved()["sample_size"] > 0
        assert SimConfig(protocol="mp3").is_matrix


class TestRun:
    def test_single_site_p1(self, small_zipf):
        eps = 0.01
        rep = run_sim(SimConfig(protocol="p1", m=1, eps=eps, query_every=5000), small_zipf)
        assert rep.tally.count_of(str(Kind.SUMMARY)) > 0
        assert all(r["err_w"] <= eps for r in rep.rows)
        assert [r["n"] for r in rep.rows] == [5000, 10000, 15000, 20000]

    def test_deterministic(self, small_zipf):
        cfg = SimConfig(protocol="p3wor", eps=0.05, seed=11, query_every=7000)
        a, b = run_sim(cfg, small_zipf), run_sim(cfg, small_zipf)
        assert a.to_csv() == b.to_csv()
        assert a.summary()["by_kind"] == b.summary()["by_kind"]

    def test_seed_changes_assignment(self, small_zipf):
        a = run_sim(SimConfig(protocol="p3wor", eps=0.05, seed=1), small_zipf)
        b = run_sim(SimConfig(protocol="p3wor", eps=0.05, seed=2), small_zipf)
        assert a.to_csv() != b.to_csv()

    def test_broadcasts_synchronous(self, small_zipf):
        def check(n, sites, coord, oracle):
            # the p1 coordinator only changes W_hat when it broadcasts
            assert all(s.w_hat == coord.w_hat for s in sites)

        run_sim(SimConfig(protocol="p1", eps=0.05, m=10), small_zipf, on_step=check)

    def test_message_conservation(self, small_zipf):
        rep = run_sim(SimConfig(protocol="p2", eps=0.01, m=20), small_zipf)
        t = rep.tally
        assert rep.messages == t.up_units + 20 * t.broadcasts
        assert t.broadcasts == t.count_of(str(Kind.BROADCAST_W)) == rep.rounds
        assert t.up_units == t.count_of(str(Kind.TOTAL)) + t.count_of(str(Kind.ELEMENT_DELTA))
        assert rep.final["msg"] == rep.messages

    def test_p2_budget_desk(self):
        zs = gen_zipfian(ZipfConfig(1_000_000, seed=1))
        m, eps = 50, 1e-3
        rep = run_sim(SimConfig(protocol="p2", m=m, eps=eps, seed=1), zs)
        assert 0 < rep.messages < 3 * (m / eps) * budget_log(1000.0, len(zs))

    def test_round_robin_and_hints(self):
        zs = ElementStream([1, 2, 3, 4], [1.0] * 4, site_hints=[1, 1, 0, 0])
        seen = []

        def check(n, sites, coord, oracle):
            seen.append(coord.received_weight)

        run_sim(SimConfig(protocol="p1", m=2, eps=0.9, assignment="round-robin"), zs, on_step=check)
        assert seen == [1.0, 2.0, 3.0, 4.0]
        with pytest.raises(ValueError):
            run_sim(SimConfig(protocol="p1", m=1, eps=0.5, assignment="hint"), zs)
        rep = run_sim(SimConfig(protocol="p1", m=2, eps=0.5, assignment="hint"), zs)
        assert rep.n == 4
        with pytest.raises(ValueError):
            run_sim(SimConfig(protocol="p1", assignment="hint"), ElementStream([1], [1.0]))

    def test_type_mismatch(self, small_zipf):
        rows = synth_matrix("highrank", 10, 3)
        with pytest.raises(TypeError):
            run_sim(SimConfig(protocol="mp2"), small_zipf)
        with pytest.raises(TypeError):
            run_sim(SimConfig(protocol="p2"), rows)

    def test_empty_stream(self):
        with pytest.raises(ValueError):
            run_sim(SimConfig(), ElementStream([], []))

    def test_matrix_rows(self):
        rows = synth_matrix("lowrank", 2000, 6, rank=2, seed=1)
        rep = run_sim(SimConfig(protocol="mp2", eps=0.2, m=5, query_every=1000), rows)
        assert [r["n"] for r in rep.rows] == [1000, 2000]
        assert all(r["err"] <= 0.2 for r in rep.rows)
        assert rep.final["sketch_rows"] >= 1

    def test_csv_header_echoes_config(self, small_zipf):
        rep = run_sim(SimConfig(protocol="p2", eps=0.05, seed=4), small_zipf)
        head, cols = rep.to_csv().splitlines()[:2]
        assert head.startswith("# config ") and '"seed": 4' in head and '"n": 20000' in head
        assert cols.split(",")[:4] == ["n", "total", "recall", "precision"]
        assert "wall_time" not in rep.to_csv()


class TestTally:
    def test_broadcast_counts_m(self):
        t = Tally()
        t.record(Message(Kind.TOTAL, 0, 1.0, 1), 7)
        t.record(broadcast(Kind.BROADCAST_W, 5.0), 7)
        assert t.messages(7) == 1 + 7 and t.broadcasts == 1
        assert t.scalars(7) == 1 + 7

    def test_heavy_flag(self):
        t = Tally()
        t.record(Message(Kind.SINGULAR_SNAPSHOT, 0, None, 12, heavy=True), 3)
        assert t.heavy == 1 and t.up_scalars == 12


class TestSweep:
    def test_eps_trend(self, small_zipf):
        reps = sweep(SimConfig(protocol="p2", seed=5), "eps", [0.5, 0.05], lambda c: small_zipf)
        assert len(reps) == 2
        assert reps[0].messages <= reps[1].messages

    def test_single_value_matches_run(self, small_zipf):
        cfg = SimConfig(protocol="p2", eps=0.05, seed=8)
        (rep,) = sweep(cfg, "eps", [0.05], lambda c: small_zipf)
        assert rep.to_csv() == run_sim(cfg, small_zipf).to_csv()

    def test_repetitions_distinct_seeds(self, small_zipf):
        reps = sweep(SimConfig(protocol="p2", repetitions=3, seed=2), "m", [10, 20], lambda c: small_zipf)
        assert [r.config["seed"] for r in reps] == [2, 3, 4, 5, 6, 7]
        text = sweep_csv(reps, "m")
        lines = text.splitlines()
        assert lines[0].startswith("# config") and lines[1].startswith("m,seed,")
        assert len(lines) == 2 + 6

    def test_parallel_matches_serial(self, small_zipf):
        cfg = SimConfig(protocol="p2", seed=1)
        a = sweep(cfg, "eps", [0.1, 0.2], lambda c: small_zipf)
        b = sweep(cfg, "eps", [0.1, 0.2], lambda c: small_zipf, workers=2)
        assert [r.to_csv() for r in a] == [r.to_csv() for r in b]

    def test_bad_axis(self, small_zipf):
        with pytest.raises(ValueError):
            sweep(SimConfig(), "phi", [0.1], lambda c: small_zipf)
        with pytest.raises(ValueError):
            sweep(SimConfig(), "eps", [], lambda c: small_zipf)

    def test_budget_log(self):
        assert budget_log(1000.0, 1_000_000) == pytest.approx(math.log2(1e9))
