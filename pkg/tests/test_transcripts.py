import pytest

from hotstuffsim.model.Base import ConfigError, NegativeVariant, Protocol
from hotstuffsim.model.ConfigModel import NetConfig, PacemakerConfig, PacemakerKind
from hotstuffsim.model.TraceModel import TraceKind
from hotstuffsim.Oracle import audit
from hotstuffsim.SimNet import Simulator
from hotstuffsim.Transcripts import run_liveless_two_phase, run_transcript, transcript_scenario


def test_two_phase_never_decides():
    trace = run_liveless_two_phase(views=20)
    assert trace.stopped_by == "views"
    assert not trace.of_kind(TraceKind.COMMIT)
    assert audit(trace).safety_ok
    # 每轮都有正确副本锁在新的节点上
    locks = {e.node for e in trace.of_kind(TraceKind.LOCK) if e.replica != 3}
    assert len(locks) >= 5


def test_three_phase_escapes_the_same_schedule():
    scenario = transcript_scenario("liveless-two-phase", protocol=Protocol.EVENT, views=20)
    trace = run_transcript(scenario)
    assert trace.of_kind(TraceKind.COMMIT)
    assert audit(trace).safety_ok


def test_liveless_requires_round_robin():
    scenario = transcript_scenario(
        "liveless-two-phase",
        protocol=Protocol.TWO_PHASE,
        pacemaker=PacemakerConfig(kind=PacemakerKind.CHAOS),
    )
    with pytest.raises(ConfigError):
        run_transcript(scenario)


def test_vheight_schedule_blocks_under_correct_rules():
    trace = run_transcript(transcript_scenario("vheight"))
    assert trace.stopped_by == "blocked"
    assert trace.blocked_at == "w"
    assert audit(trace).safety_ok


def test_vheight_variant_commits_conflicting_nodes():
    scenario = transcript_scenario("vheight", negative_variant=NegativeVariant.VHEIGHT)
    trace = run_transcript(scenario)
    report = audit(trace)
    assert trace.stopped_by == "transcript-end"
    assert not report.safety_ok
    assert report.violations


def test_direct_parent_schedule_is_safe_under_correct_rules():
    trace = run_transcript(transcript_scenario("direct-parent"))
    assert audit(trace).safety_ok


def test_direct_parent_variant_commits_conflicting_nodes():
    scenario = transcript_scenario("direct-parent", negative_variant=NegativeVariant.DIRECT_PARENT)
    report = audit(run_transcript(scenario))
    assert not report.safety_ok


def test_simulator_dispatches_transcripts():
    scenario = transcript_scenario("vheight", negative_variant=NegativeVariant.VHEIGHT)
    sim = Simulator(scenario)
    trace = sim.run()
    assert not audit(trace).safety_ok
    assert len(sim.replicas) == 4


def test_transcripts_need_four_replicas():
    with pytest.raises(ConfigError):
        run_transcript(transcript_scenario("vheight", net=NetConfig(n=7, f=2)))
