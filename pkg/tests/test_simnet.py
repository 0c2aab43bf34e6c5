import pytest
from conftest import SCENARIOS

from hotstuffsim.model.Base import ConfigError, NotByzantine, Protocol
from hotstuffsim.model.ConfigModel import (
    ByzantineBehavior,
    ByzantineScript,
    NetConfig,
    PreGstKind,
    PreGstPolicy,
    Scenario,
)
from hotstuffsim.model.TraceModel import TraceKind
from hotstuffsim.Oracle import audit, liveness_report
from hotstuffsim.SimNet import Simulator, inject_equivocation, load_scenario


def chaotic(seed: int = 5) -> Scenario:
    net = NetConfig(gst=200, seed=seed, pre_gst=PreGstPolicy(kind=PreGstKind.DELAY, max_delay=80))
    return Scenario(protocol=Protocol.EVENT, net=net, max_views=15)


def test_same_seed_same_trace():
    a = Simulator(chaotic()).run()
    b = Simulator(chaotic()).run()
    assert a.model_dump() == b.model_dump()


def test_seed_override_changes_schedule():
    a = Simulator(chaotic(), seed=1).run()
    b = Simulator(chaotic(), seed=2).run()
    assert a.seed == 1 and b.seed == 2
    assert [e.at for e in a.events] != [e.at for e in b.events]


def test_drop_before_gst_then_decide_within_bound():
    net = NetConfig(gst=100, delta=10, pre_gst=PreGstPolicy(kind=PreGstKind.DROP))
    trace = Simulator(Scenario(protocol=Protocol.BASIC, net=net, max_views=6)).run()
    assert trace.of_kind(TraceKind.DROP)
    assert audit(trace).ok
    report = liveness_report(trace)
    assert report.decided
    assert report.sync_tick >= 100
    assert report.within_bound, report


def test_adversary_isolation_is_safe():
    net = NetConfig(gst=150, pre_gst=PreGstPolicy(kind=PreGstKind.ADVERSARY, max_delay=60, isolate=[2]))
    trace = Simulator(Scenario(protocol=Protocol.CHAINED, net=net, max_views=15)).run()
    assert audit(trace).safety_ok


def test_equivocating_leader_cannot_break_safety():
    scenario = load_scenario(SCENARIOS / "equivocation.json")
    trace = Simulator(scenario).run()
    report = audit(trace)
    assert report.ok, report.notes
    assert trace.byzantine == [1]


def test_inject_equivocation():
    script = ByzantineScript(behaviors={2: ByzantineBehavior.SILENT})
    updated = inject_equivocation(script, 2, 6, ("a", "b"))
    assert updated.behaviors[2] == ByzantineBehavior.EQUIVOCATE
    assert updated.equivocations[0].view == 6
    with pytest.raises(NotByzantine):
        inject_equivocation(script, 0, 6, ("a", "b"))


@pytest.mark.parametrize("protocol", [Protocol.BASIC, Protocol.CHAINED, Protocol.EVENT])
def test_silent_replica(protocol):
    script = ByzantineScript(behaviors={0: ByzantineBehavior.SILENT})
    trace = Simulator(Scenario(protocol=protocol, byzantine=script, max_views=12)).run()
    report = audit(trace)
    assert report.safety_ok
    assert all(e.replica != 0 for e in trace.of_kind(TraceKind.VOTE))


def test_withheld_votes_are_not_delivered():
    script = ByzantineScript(behaviors={3: ByzantineBehavior.WITHHOLD_VOTES})
    trace = Simulator(Scenario(protocol=Protocol.EVENT, byzantine=script, max_views=10)).run()
    assert audit(trace).safety_ok
    assert any(e.replica == 3 for e in trace.of_kind(TraceKind.VOTE))
    # 副本 3 只在自己担任领导者的视图(view % 4 == 3)发出 GENERIC 提案, 其余都是被扣留的投票
    leaked = [
        e
        for e in trace.of_kind(TraceKind.DELIVER)
        if e.peer == 3 and e.phase == "GENERIC" and e.view is not None and e.view % 4 != 3
    ]
    assert not leaked


def test_tick_budget():
    trace = Simulator(Scenario(protocol=Protocol.EVENT, max_views=None, max_ticks=300)).run()
    assert trace.stopped_by == "tick-budget"
    assert trace.tick_budget_exhausted
    assert trace.final_tick <= 300


def test_invalid_configs():
    with pytest.raises(ConfigError):
        NetConfig(n=3, f=1)
    with pytest.raises(ConfigError):
        Scenario(byzantine=ByzantineScript(behaviors={0: ByzantineBehavior.SILENT, 1: ByzantineBehavior.SILENT}))
    with pytest.raises(ConfigError):
        Scenario(byzantine=ByzantineScript(behaviors={7: ByzantineBehavior.SILENT}))


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_scenarios_load(path):
    scenario = load_scenario(path)
    assert scenario.name == path.stem
