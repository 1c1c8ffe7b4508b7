import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

import distvc._kernels as kernels
from distvc.engine import (
    GammaMode,
    IterationCapExceeded,
    RunConfig,
    RunReport,
    Trace,
    TraceFormatError,
    replay,
    run,
)
from distvc.exact import Rat, grid_root
from distvc.graph import WeightedGraph, generate
from distvc.protocol import Kind, Msg, Status

from oracle_sim import simulate

K2 = WeightedGraph.from_edges([1, 1], [(0, 1)])
MODES = ["auto", "half", "eps-power:2", "bcs"]


def test_k2_hand_trace():
    report, trace = run(RunConfig(K2, "1", "half"))
    assert report.cover == [0, 1]
    assert report.iterations == [1, 1]
    assert report.rounds == 4
    assert report.dual == {(0, 1): Rat(1)}
    assert report.z == 2 and report.epsilon_prime == Rat(1, 3)
    h = Rat(1, 2)
    (rec,) = trace.iterations
    assert rec.messages == [
        Msg(0, 1, Kind.LEVEL, 1),
        Msg(1, 0, Kind.LEVEL, 1),
        Msg(0, 1, Kind.REQUEST, h),
        Msg(1, 0, Kind.REQUEST, h),
        Msg(0, 1, Kind.BUDGET, h),
        Msg(1, 0, Kind.BUDGET, h),
        Msg(0, 1, Kind.COVER),
        Msg(1, 0, Kind.COVER),
    ]
    assert rec.states == [(0, Rat(0), 1, Status.IN_COVER), (1, Rat(0), 1, Status.IN_COVER)]
    assert rec.delta == [(0, 1, Rat(1))]


def test_isolated_vertex():
    g = WeightedGraph.from_edges([5], [])
    report, trace = run(RunConfig(g, "1/2"))
    assert report.status == ["NotInCover"]
    assert report.iterations == [1]
    assert report.messages == 0
    assert report.cover == []


def test_empty_graph():
    g = WeightedGraph((), ())
    report, trace = run(RunConfig(g, "1"))
    assert report.cover == [] and report.rounds == 0
    assert list(replay(trace)) == []
    assert list(replay(Trace.from_jsonl(trace.to_jsonl()))) == []


def test_cover_reaches_neighbor_next_iteration():
    # path 0-1-2, weights 1,8,1: each end gets 1/2 and grants 1/2 (w=0, joins);
    # the middle pays 1 twice, keeps 6 > vault 4 (level stays 1), then is isolated
    g = WeightedGraph.from_edges([1, 8, 1], [(0, 1), (1, 2)])
    report, trace = run(RunConfig(g, "1", "half"))
    assert report.status == ["InCover", "NotInCover", "InCover"]
    assert report.iterations == [1, 2, 1]
    last = trace.iterations[-1]
    assert last.messages == [] and last.states == [(1, Rat(6), 1, Status.NOT_IN_COVER)]


# -- gamma modes -----------------------------------------------------------------


def test_gamma_modes():
    star = generate("star", {"delta": 2**16 - 1})  # max degree below 2**16
    assert GammaMode.parse("half").resolve(Rat(1, 2), 5) == Rat(1, 2)
    assert GammaMode.parse("auto").resolve(Rat(1, 2), 16) == Rat(1, 2)
    assert GammaMode.parse("auto").resolve(Rat(1, 2), 2**16) == Rat(1, 4)
    assert GammaMode.parse("bcs").resolve(Rat(1), 5) == Rat(1, 3)
    assert GammaMode.parse("3/7").resolve(Rat(1), 5) == Rat(3, 7)
    assert GammaMode.parse("eps-power:2").resolve(Rat(1, 16), 5) == Rat(1, 2)
    assert GammaMode.parse("eps-power:3").resolve(Rat(1, 64), 5) == grid_root(Rat(1, 64), 6)
    assert GammaMode.parse("eps-power:1").resolve(Rat(2), 5) == Rat(1, 2)
    assert RunConfig(star, "1/2").gamma < Rat(1, 2)
    assert RunConfig(star, "1/2", Rat(3, 7)).gamma_mode == GammaMode.parse("3/7")
    with pytest.raises(ValueError):
        RunConfig(star, "1/2", Rat(1))
    for text in MODES + ["eps-power:7", "1/3"]:
        assert str(GammaMode.parse(text)) == text


@pytest.mark.parametrize("text", ["eps-power:0", "eps-power:x", "0", "1", "3/2", "0.5", "fast"])
def test_gamma_mode_rejects(text):
    with pytest.raises(ValueError):
        GammaMode.parse(text)


def test_config_rejects():
    with pytest.raises(ValueError):
        RunConfig(K2, "0")
    with pytest.raises(ValueError):
        RunConfig(K2, "-1/2")
    with pytest.raises(ValueError):
        RunConfig(K2, "1", analysis_K="1")
    with pytest.raises(ValueError):
        RunConfig(K2, "1", engine="warp")


def test_iteration_cap():
    g = generate("path", {"n": 30}, 1, "uniform:8")
    with pytest.raises(IterationCapExceeded):
        run(RunConfig(g, "1/16", "bcs", iteration_cap=1))
    with pytest.raises(IterationCapExceeded):
        run(RunConfig(g, "1/16", "bcs", iteration_cap=1, engine="reference"))


# -- differential and determinism ---------------------------------------------------

graphs = st.builds(
    lambda n, p, seed, w: generate("gnp", {"n": n, "p": p}, seed, w),
    st.integers(1, 14),
    st.sampled_from(["1/5", "1/2", "4/5"]),
    st.integers(0, 2**32),
    st.sampled_from(["unit", "uniform:8"]),
)
epsilons = st.sampled_from(["2", "1", "1/2", "1/8", "1/33"])


@given(graphs, epsilons, st.sampled_from(MODES))
def test_matches_independent_simulation(g, eps, mode):
    config = RunConfig(g, eps, mode, record_trace=False)
    report, _ = run(config)
    ref = simulate(g.weights, g.edges, Fraction(eps), Fraction(config.gamma))
    assert report.z == ref["z"]
    assert report.status == ref["status"]
    assert report.iterations == ref["iterations"]
    assert [Fraction(w) for w in report.final_weights] == ref["w"]
    assert {e: Fraction(x) for e, x in report.dual.items()} == ref["delta"]


def _artifacts(config):
    report, trace = run(config)
    return report.to_json(), trace.to_jsonl()


@given(graphs, epsilons, st.sampled_from(MODES))
def test_kernel_matches_reference_engine(g, eps, mode):
    assert _artifacts(RunConfig(g, eps, mode)) == _artifacts(RunConfig(g, eps, mode, engine="reference"))


@pytest.mark.parametrize("name", sorted(kernels.available_backends("loop")))
def test_loop_backends_agree(name, monkeypatch):
    impl = kernels.available_backends("loop")[name].run_protocol
    for seed in range(40):
        g = generate("gnp", {"n": 12, "p": "1/3"}, seed, "uniform:8")
        for mode in MODES:
            config = RunConfig(g, "1/4", mode)
            want = _artifacts(RunConfig(g, "1/4", mode, engine="reference"))
            monkeypatch.setattr(kernels, "run_protocol", impl)
            assert _artifacts(config) == want


def test_parallel_matches_sequential():
    g = generate("bounded_degree_random", {"n": 300, "d": 6}, 5, "uniform:50")
    seq = _artifacts(RunConfig(g, "1/8", "auto"))
    par = _artifacts(RunConfig(g, "1/8", "auto", workers=4))
    assert seq == par


def test_repeat_is_byte_identical():
    g = generate("gnp", {"n": 40, "p": "1/4"}, 9, "uniform:8")
    assert _artifacts(RunConfig(g, "1/16", "auto")) == _artifacts(RunConfig(g, "1/16", "auto"))


def test_record_trace_off_keeps_report():
    g = generate("gnp", {"n": 30, "p": "1/4"}, 2, "uniform:8")
    r1, t1 = run(RunConfig(g, "1/2"))
    r2, t2 = run(RunConfig(g, "1/2", record_trace=False))
    assert r1.to_json() == r2.to_json()
    assert t2.iterations == [] and len(t1.iterations) == r1.max_iterations


# -- trace --------------------------------------------------------------------------


@given(graphs, epsilons, st.sampled_from(MODES))
def test_trace_round_trip_and_replay(g, eps, mode):
    report, trace = run(RunConfig(g, eps, mode))
    text = trace.to_jsonl()
    back = Trace.from_jsonl(text)
    assert back.to_jsonl() == text
    steps = list(replay(back))
    assert len(steps) == report.max_iterations
    assert all(not s.divergences for s in steps)


@given(graphs, epsilons, st.sampled_from(MODES))
def test_trace_state_monotonicity(g, eps, mode):
    _, trace = run(RunConfig(g, eps, mode))
    last = {v: (Rat(w), 1, Status.ACTIVE) for v, w in enumerate(g.weights)}
    for rec in trace.iterations:
        for v, w, level, status in rec.states:
            w0, l0, s0 = last[v]
            assert s0 is Status.ACTIVE  # terminal states never report again
            assert 0 <= w <= w0 and level >= l0
            last[v] = (w, level, status)


def test_trace_records_are_canonical_json():
    _, trace = run(RunConfig(K2, "1", "half"))
    lines = trace.to_jsonl().splitlines()
    header = json.loads(lines[0])
    assert header["record"] == "header" and header["gamma"] == "1/2"
    msg = json.loads(lines[1])
    assert msg == {
        "record": "msg",
        "iteration": 0,
        "phase": "A",
        "sender": 0,
        "receiver": 1,
        "variant": "LevelAnnounce",
        "amount": "1/1",
    }
    budget = [json.loads(x) for x in lines if '"Budget"' in x]
    assert budget[0]["amount"] == "1/2" and budget[0]["phase"] == "C"
    cover = [json.loads(x) for x in lines if '"Cover"' in x]
    assert cover[0]["amount"] is None and cover[0]["phase"] == "D"


def _tamper(text, pick, edit):
    lines = text.splitlines()
    for idx, line in enumerate(lines):
        d = json.loads(line)
        if pick(d):
            edit(d)
            lines[idx] = json.dumps(d, separators=(",", ":"))
            return "\n".join(lines) + "\n", d
    raise AssertionError("nothing to tamper with")


def test_tampered_budget_is_detected():
    g = generate("gnp", {"n": 12, "p": "1/2"}, 4, "uniform:8")
    _, trace = run(RunConfig(g, "1/8", "half"))
    pick = lambda d: d["record"] == "msg" and d["variant"] == "Budget" and d["iteration"] == 1 and d["amount"] != "0/1"  # noqa: E731
    text, d = _tamper(trace.to_jsonl(), pick, lambda d: d.update(amount="1/1000"))
    steps = list(replay(Trace.from_jsonl(text)))
    bad = [s for s in steps if s.divergences]
    assert bad and bad[0].iteration == 1
    assert any(x.vertex == d["sender"] and x.phase == "C" for x in bad[0].divergences)


def test_tampered_state_and_truncation_detected():
    _, trace = run(RunConfig(K2, "1", "half"))
    text, _ = _tamper(trace.to_jsonl(), lambda d: d["record"] == "state", lambda d: d.update(level=2))
    assert any(s.divergences for s in replay(Trace.from_jsonl(text)))
    head_only = trace.to_jsonl().splitlines()[0] + "\n"
    steps = list(replay(Trace.from_jsonl(head_only)))
    assert steps and steps[-1].divergences


@pytest.mark.parametrize(
    "text",
    ["", '{"record":"msg","iteration":0}\n', "not json\n", '{"record":"header"}\n'],
)
def test_malformed_trace(text):
    with pytest.raises(TraceFormatError):
        Trace.from_jsonl(text)


def test_report_json_round_trip():
    g = generate("gnp", {"n": 20, "p": "1/3"}, 3, "uniform:8")
    report, _ = run(RunConfig(g, "1/3", "eps-power:2"))
    back = RunReport.from_json(report.to_json())
    assert back.to_json() == report.to_json()
    d = json.loads(report.to_json())
    assert d["metrics"]["rounds"] == 4 * d["metrics"]["max_iterations"]
    assert sum(d["metrics"]["messages_by_kind"].values()) == d["metrics"]["messages"]
    with pytest.raises(ValueError):
        RunReport.from_dict({"schema": "other"})
