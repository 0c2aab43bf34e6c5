import itertools

import pytest
from conftest import SCENARIOS

from hotstuffsim.Harness import run_one
from hotstuffsim.model.Base import Protocol
from hotstuffsim.model.ConfigModel import (
    ByzantineBehavior,
    ByzantineScript,
    NetConfig,
    PacemakerConfig,
    PacemakerKind,
    PreGstKind,
    PreGstPolicy,
    RunConfig,
    Scenario,
)
from hotstuffsim.model.TraceModel import TraceKind
from hotstuffsim.Oracle import audit, liveness_report
from hotstuffsim.SimNet import Simulator, load_scenario

BEHAVIORS = [ByzantineBehavior.SILENT, ByzantineBehavior.EQUIVOCATE, ByzantineBehavior.WITHHOLD_VOTES]
PACEMAKERS = [PacemakerKind.ROUND_ROBIN, PacemakerKind.CHAOS]


@pytest.mark.parametrize(
    "protocol,behavior,kind,seed",
    list(itertools.product(list(Protocol), BEHAVIORS, PACEMAKERS, range(4))),
    ids=lambda v: str(getattr(v, "value", v)),
)
def test_randomized_runs_pass_audit(protocol, behavior, kind, seed):
    net = NetConfig(
        gst=150,
        seed=seed,
        pre_gst=PreGstPolicy(kind=PreGstKind.ADVERSARY, max_delay=60, isolate=[seed % 3]),
    )
    scenario = Scenario(
        name=f"random-{behavior.value}",
        protocol=protocol,
        net=net,
        pacemaker=PacemakerConfig(kind=kind, seed=seed),
        byzantine=ByzantineScript(behaviors={3: behavior}),
        max_views=12,
        max_ticks=20_000,
    )
    report = audit(Simulator(scenario).run())
    assert report.ok, report.notes


@pytest.mark.parametrize("protocol", [Protocol.CHAINED, Protocol.EVENT, Protocol.TWO_PHASE], ids=lambda p: p.value)
@pytest.mark.parametrize("seed", range(3))
def test_seven_replicas_with_two_faults(protocol, seed):
    net = NetConfig(
        n=7,
        f=2,
        gst=200,
        seed=seed,
        pre_gst=PreGstPolicy(kind=PreGstKind.ADVERSARY, max_delay=80, isolate=[seed % 5]),
    )
    scenario = Scenario(
        name="n7",
        protocol=protocol,
        net=net,
        pacemaker=PacemakerConfig(kind=PacemakerKind.CHAOS, seed=seed),
        byzantine=ByzantineScript(behaviors={5: ByzantineBehavior.EQUIVOCATE, 6: ByzantineBehavior.SILENT}),
        max_views=16,
        max_ticks=40_000,
    )
    report = audit(Simulator(scenario).run())
    assert report.ok, report.notes


@pytest.mark.parametrize("protocol", list(Protocol), ids=lambda p: p.value)
def test_decision_within_bound_after_gst(protocol):
    net = NetConfig(gst=100, delta=10, pre_gst=PreGstPolicy(kind=PreGstKind.DROP))
    views = 6 if protocol == Protocol.BASIC else 8
    trace = Simulator(Scenario(protocol=protocol, net=net, max_views=views)).run()
    assert trace.of_kind(TraceKind.DROP)
    assert audit(trace).ok
    report = liveness_report(trace)
    assert report.decided
    assert report.sync_tick >= 100
    assert report.bound == 80
    assert report.within_bound, report


def test_chaotic_network_recovers_after_gst():
    trace = Simulator(load_scenario(SCENARIOS / "pre-gst-chaos.json")).run()
    report = audit(trace)
    assert report.ok, report.notes
    assert liveness_report(trace).decided
    assert any(trace.executed[i] for i in trace.correct)


@pytest.mark.parametrize("protocol", [Protocol.EVENT, Protocol.CHAINED], ids=lambda p: p.value)
def test_no_viewchange_extras_at_seven_replicas(protocol):
    scenario = Scenario(protocol=protocol, net=NetConfig(n=7, f=2), max_views=20)
    metrics = run_one(RunConfig(scenario=scenario)).metrics
    assert metrics.audit_ok
    assert metrics.decisions > 0
    assert metrics.extra_viewchange_authenticators == 0
