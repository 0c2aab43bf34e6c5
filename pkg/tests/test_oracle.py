import pytest

from hotstuffsim.model.Base import BoundTooLarge, ConfigError, NegativeVariant, UpdateMode
from hotstuffsim.model.ConfigModel import ExploreAlphabet, ExploreBound
from hotstuffsim.model.TraceModel import AuditReport, NodeInfo, RunTrace, TraceEvent, TraceKind, Violation
from hotstuffsim.Oracle import Action, TemplateModel, audit, explore


def fork_trace() -> RunTrace:
    """两条从创世节点分叉的分支 a / b, 副本 0 提交 a, 副本 1 提交 b"""
    g, a, b = "0" * 63 + "1", "a" * 64, "b" * 64
    nodes = {
        g: NodeInfo(id=g, parent="0" * 64, height=0),
        a: NodeInfo(id=a, parent=g, height=1, cmd="a"),
        b: NodeInfo(id=b, parent=g, height=1, cmd="b"),
    }
    events = [
        TraceEvent(at=1, replica=0, kind=TraceKind.COMMIT, view=4, node=a),
        TraceEvent(at=2, replica=1, kind=TraceKind.COMMIT, view=4, node=b),
    ]
    return RunTrace(
        protocol="event",
        n=4,
        f=1,
        seed=0,
        gst=0,
        delta=10,
        byzantine=[3],
        events=events,
        nodes=nodes,
        genesis=g,
        executed={0: ["a"], 1: ["b"], 2: []},
    )


def test_audit_detects_conflicting_commits():
    report = audit(fork_trace())
    assert not report.safety_ok
    assert not report.prefix_order_ok
    assert report.violations[0].replicas == (0, 1)
    assert not report.ok


def test_byzantine_commits_are_ignored():
    trace = fork_trace()
    trace.byzantine = [1]
    trace.executed = {0: ["a"], 2: [], 3: []}
    assert audit(trace).safety_ok


def test_audit_report_consistency():
    with pytest.raises(ValueError):
        AuditReport(safety_ok=False)
    with pytest.raises(ValueError):
        AuditReport(violations=[Violation(replicas=(0, 1), nodes=("a", "b"))])


def test_monotonicity_check():
    trace = fork_trace()
    trace.events = [
        TraceEvent(at=1, replica=0, kind=TraceKind.ENTER_VIEW, view=3),
        TraceEvent(at=2, replica=0, kind=TraceKind.ENTER_VIEW, view=2),
    ]
    trace.executed = {}
    report = audit(trace)
    assert report.safety_ok
    assert not report.monotonicity_ok


def test_explore_conformant_rules():
    report = explore(ExploreBound(max_views=4))
    assert report.ok
    assert report.states > 1
    assert report.terminal_states >= 1
    assert report.bound["max_views"] == 4


def test_explore_forks_with_conformant_rules():
    report = explore(ExploreBound(max_views=3, alphabet=ExploreAlphabet.FORKS))
    assert report.ok
    assert report.terminal_states >= 1


def test_explore_forks_with_two_phase_rules():
    report = explore(ExploreBound(max_views=3, alphabet=ExploreAlphabet.FORKS, mode=UpdateMode.TWO_PHASE))
    assert report.ok


def test_explore_two_phase_rules_are_safe():
    report = explore(ExploreBound(max_views=4, mode=UpdateMode.TWO_PHASE))
    assert report.ok


def test_explore_is_independent_of_workers():
    one = explore(ExploreBound(max_views=3))
    many = explore(ExploreBound(max_views=3, workers=3))
    assert (one.states, one.terminal_states) == (many.states, many.terminal_states)


@pytest.mark.parametrize(
    "alphabet,variant",
    [
        (ExploreAlphabet.VHEIGHT, NegativeVariant.VHEIGHT),
        (ExploreAlphabet.DIRECT_PARENT, NegativeVariant.DIRECT_PARENT),
    ],
)
def test_explore_finds_counterexample_for_weakened_rules(alphabet, variant):
    report = explore(ExploreBound(alphabet=alphabet, variant=variant, stop_on_violation=True))
    assert not report.ok
    assert len(report.violations) == 1
    assert all("->r" in step for step in report.violations[0])


def test_template_layouts():
    model = TemplateModel(ExploreBound(alphabet=ExploreAlphabet.VHEIGHT))
    assert [n.height for n in model.nodes] == [1, 2, 3, 4, 4, 5, 6, 7]
    assert model.conflicts(0, 4)
    assert not model.symmetric


def test_explore_bounds():
    with pytest.raises(ConfigError):
        ExploreBound(n=7, f=2)
    with pytest.raises(BoundTooLarge):
        explore(ExploreBound(max_views=3, max_states=5))


def test_forks_layout():
    model = TemplateModel(ExploreBound(max_views=3, alphabet=ExploreAlphabet.FORKS))
    assert [n.height for n in model.nodes] == [1, 2, 3, 2, 3, 3, 3]
    assert model.pred == [None, None, None, 0, 0, 1, 3]
    # 同高度不同前驱的提案互相冲突
    assert model.conflicts(2, 4)
    assert not model.conflicts(0, 6)
    assert not model.symmetric


def test_replay_produces_auditable_trace():
    model = TemplateModel(ExploreBound(max_views=4))
    x = [model.labels.index(f"x{i}@{i}") for i in range(1, 5)]
    path = [Action(k, r) for k in x[:3] for r in (0, 1)] + [Action(x[3], 0)]
    trace = model.replay(path)

    assert trace.executed[0] == ["x1"]
    assert trace.executed[1] == []
    commits = trace.of_kind(TraceKind.COMMIT)
    assert [(e.replica, e.node) for e in commits] == [(0, model.nodes[x[0]].id)]
    locks = [e for e in trace.of_kind(TraceKind.LOCK) if e.replica == 0]
    assert [e.node for e in locks] == [model.nodes[x[0]].id, model.nodes[x[1]].id]
    assert {e.node for e in trace.of_kind(TraceKind.QC)} == {model.nodes[k].id for k in x[:3]}
    assert audit(trace).ok


def test_counterexample_schedule_replays_to_failed_audit():
    bound = ExploreBound(alphabet=ExploreAlphabet.VHEIGHT, variant=NegativeVariant.VHEIGHT, stop_on_violation=True)
    report = explore(bound)
    model = TemplateModel(bound)
    path = []
    for step in report.violations[0]:
        label, replica = step.split("->r")
        path.append(Action(model.labels.index(label), int(replica)))
    result = audit(model.replay(path))
    assert not result.ok
