import csv
import io
import json
import math
import os

import numpy as np
import pytest

from oracles import mean_ci99
from phantomnet import dnp3
from phantomnet.cli import main
from phantomnet.harness import (
    ConfigError,
    IoFailure,
    MetricsReport,
    bench_spoof,
    load_scenario,
    report,
    run,
    simulate,
    summarize,
)
from phantomnet.ids import train_normal

SHORT = {"duration": 40.0, "seed": 3}


@pytest.mark.parametrize(
    "data, path",
    [
        ({"spoof_fraction": 1.5}, "spoof_fraction"),
        ({"colour": "red"}, "colour"),
        ({"topology": {"n_left": 0}}, "topology.n_left"),
        ({"topology": {"speed": 1}}, "topology.speed"),
        ({"phantom_set": [1]}, "phantom_set[0]"),
        ({"process": {"lower": [0.0]}}, "process.lower"),
        ({"process": {"C": [[1.0, 1.0]]}}, "process.C[0]"),
        ({"scripted_alerts": [{"node": "m42", "t": 1.0}]}, "scripted_alerts[0].node"),
        ({"process": {"C": [[0, 0, 0, 0, 0]], "d": [0]}}, "process.C"),
        ({"duration": -1}, "duration"),
    ],
)
def test_config_errors_name_the_field(data, path):
    with pytest.raises(ConfigError) as err:
        load_scenario(data)
    assert err.value.path == path


def test_yaml_text_and_overrides():
    sc = load_scenario("name: x\nseed: 4\ntopology: {n_left: 2, n_right: 3}\n", seed=9)
    assert sc.name == "x" and sc.seed == 9 and sc.topology.n_right == 3


def test_zero_fraction_spoofs_nothing():
    res = simulate(load_scenario(SHORT | {"spoof_fraction": 0.0}))
    c = res.metrics.counters
    assert c["quarantined"] == 0 and c["spoofed_responses"] == 0 and c["redirected"] == 0
    assert res.metrics.series("rtt", "READ/spoofed") == []
    assert c["delivered"] == c["injected"]
    assert all(req.answers == 1 for m in res.masters.values() for req in m.requests)


def test_zero_duration_writes_valid_files(tmp_path):
    res = run(load_scenario({"duration": 0.0}), tmp_path)
    assert res.metrics.samples == {}
    assert (tmp_path / "events.jsonl").read_text() == ""
    rows = list(csv.DictReader(io.StringIO((tmp_path / "metrics.csv").read_text())))
    assert {r["metric"] for r in rows} >= {"events", "injected"}
    assert all(float(r["mean"]) == 0 for r in rows)
    json.loads((tmp_path / "metrics.json").read_text())


def test_dumbbell8_quarantines_ceil_fraction():
    sc = load_scenario(SHORT | {"topology": {"n_left": 4, "n_right": 4}, "spoof_fraction": 0.8})
    res = simulate(sc)
    quarantines = [r for r in res.sim.log.records if r.get("action") == "quarantine"]
    assert len(quarantines) == math.ceil(0.8 * 4) == 4
    assert {r["node"] for r in quarantines} == {"m0", "m1", "m2", "m3"}


def test_fraction_rounds_up():
    sc = load_scenario(SHORT | {"topology": {"n_left": 8, "n_right": 8}, "spoof_fraction": 0.3})
    res = simulate(sc)
    assert res.metrics.counters["quarantined"] == 3


def test_spoofed_rtt_decomposes_exactly():
    res = simulate(load_scenario(SHORT))
    topo = res.sim.topology
    spoofed = [s for m in res.masters.values() for s in m.samples if s.provenance == "plan"]
    assert spoofed
    for s in spoofed:
        expected = 2 * (topo.access_latency + topo.controller_latency) + s.tags["service"] + s.tags["sampled_delay"]
        assert s.rtt == pytest.approx(expected, abs=1e-12)
    live = [s for m in res.masters.values() for s in m.samples if s.provenance == "live"]
    # a live read crosses both access links twice and the core link twice
    for s in live:
        assert s.rtt >= 4 * topo.access_latency + 2 * topo.core_latency


def test_confirmed_traffic_stays_out_of_normal_model():
    sc = load_scenario(SHORT | {"duration": 60.0, "adversaries": ["m0"]})
    res = simulate(sc)
    confirmed = res.controller.confirmed
    assert confirmed == {"m0"}
    history = res.ids.history
    assert any(e.node == "m0" for e in history)
    clean = [e for e in history if e.node not in confirmed]
    assert res.metrics.counters["normal_model_samples"] == train_normal(clean).sample_count
    assert all(node not in confirmed for node, _ in res.ids.model.per_node)
    assert train_normal(history).sample_count > res.metrics.counters["normal_model_samples"]


def test_adversaries_never_touch_live_processes():
    res = simulate(load_scenario(SHORT | {"duration": 60.0}))
    c = res.metrics.counters
    assert c["confirmed"] == c["quarantined"] == 4
    assert c["commands_received"] == 4
    assert c["live_commands_from_quarantined"] == 0
    assert all(not o.commands for o in res.outstations.values())


def test_scripted_restore():
    sc = load_scenario(SHORT | {"scripted_restores": [{"node": "m1", "t": 25.0}], "adversaries": []})
    res = simulate(sc)
    rec = res.controller.records["m1"]
    assert rec.status.value == "restored" and rec.ended_at == 25.0
    after = [s for s in res.masters["m1"].samples if s.t > 25.1]
    assert after and all(s.provenance == "live" for s in after)
    assert res.metrics.counters["restored"] == 1


def test_report_empty_is_header_only(tmp_path):
    path = report(None, tmp_path / "m.csv")
    assert path.read_text() == "scenario,seed,metric,class,mean,p50,p99,ci99_low,ci99_high\n"
    path = report(MetricsReport("s", 1), tmp_path / "n.csv")
    assert path.read_text().count("\n") == 1


def test_single_sample_degenerate_interval():
    s = summarize([0.25])
    assert s["mean"] == s["ci99_low"] == s["ci99_high"] == s["p50"] == s["p99"] == 0.25


def test_summary_matches_independent_routine():
    x = list(np.random.default_rng(11).gamma(2.0, 0.004, 1000))
    s = summarize(x)
    mu, lo, hi = mean_ci99(x)
    assert s["mean"] == pytest.approx(mu, abs=1e-9)
    assert s["ci99_low"] == pytest.approx(lo, abs=1e-9)
    assert s["ci99_high"] == pytest.approx(hi, abs=1e-9)


def test_report_rows_tagged_and_round_trip(tmp_path):
    m = MetricsReport("scn", 5)
    for v in (1.0, 2.0, 3.0):
        m.add("rtt", "READ/live", v)
    m.counters["events"] = 7
    report(m, tmp_path / "a.csv")
    back = MetricsReport.from_dict(json.loads(report(m, tmp_path / "a.json", "json").read_text()))
    report(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert all(r["scenario"] == "scn" and r["seed"] == "5" for r in rows)


def test_report_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        report(MetricsReport("s", 1), tmp_path / "missing" / "x.csv")


def test_bench_spoof_short():
    res = bench_spoof(duration=0.3)
    assert res.packets > 0 and res.fragment_octets == 1010
    assert res.framed_octets == len(dnp3.encode_message(dnp3.encode_analog_response([0] * 200), 1, 1024))
    assert res.latency_p99 >= res.latency_p50 > 0


def test_bench_rejects_oversized_points():
    with pytest.raises(ValueError):
        bench_spoof(packet_size=1024, n_points=203, duration=0.1)


def test_cli_run_and_report(tmp_path, capsys):
    scenario = tmp_path / "s.yaml"
    scenario.write_text("name: cli\nduration: 15\n")
    assert main(["--seed", "2", "--out-dir", str(tmp_path / "o"), "run", str(scenario)]) == 0
    assert "cli seed=2" in capsys.readouterr().out
    assert main(["--out-dir", str(tmp_path / "r"), "report", str(tmp_path / "o" / "metrics.json")]) == 0
    assert (tmp_path / "r" / "report.csv").read_bytes() == (tmp_path / "o" / "metrics.csv").read_bytes()


def test_cli_config_error(tmp_path, capsys):
    scenario = tmp_path / "bad.yaml"
    scenario.write_text("spoof_fraction: 2\n")
    assert main(["--out-dir", str(tmp_path), "run", str(scenario)]) == 2
    assert "spoof_fraction" in capsys.readouterr().err


def test_cli_bench(tmp_path, capsys):
    assert main(["--out-dir", str(tmp_path), "bench-spoof", "--duration", "0.2"]) == 0
    data = json.loads((tmp_path / "bench.json").read_text())
    assert data["n_points"] == 200 and data["packets"] > 0


@pytest.mark.slow
@pytest.mark.skipif((os.cpu_count() or 1) < 2, reason="worker scaling needs at least two CPUs")
def test_two_workers_scale():
    one = bench_spoof(duration=2.0, workers=1)
    two = bench_spoof(duration=2.0, workers=2)
    assert two.packets_per_second >= 1.5 * one.packets_per_second
