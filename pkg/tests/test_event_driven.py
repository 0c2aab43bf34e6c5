import pytest
from conftest import full_qc, grow

from hotstuffsim.CryptoProvider import MockCryptoProvider
from hotstuffsim.EventDriven import EventDrivenReplica, plan_update, should_vote
from hotstuffsim.model.Base import ConflictingCommit, InvalidQC, MsgType, NegativeVariant, NotLeader, Protocol, UpdateMode
from hotstuffsim.model.ConfigModel import BeatPolicy, PacemakerConfig, Scenario
from hotstuffsim.model.MsgModel import ProtocolMsg
from hotstuffsim.model.TreeModel import QuorumCert
from hotstuffsim.Oracle import audit, pipeline_latencies
from hotstuffsim.Pacemaker import Pacemaker
from hotstuffsim.SimNet import Simulator


def make_replica(me: int, crypto, tree=None) -> EventDrivenReplica:
    """启动后的副本; 给出 tree 时把其中的节点全部装入副本本地树"""
    replica = EventDrivenReplica(me, 4, 1, crypto, Pacemaker(PacemakerConfig(), 4, 1))
    replica.start()
    if tree is not None:
        replica.tree.insert_branch(list(tree.nodes.values()))
    return replica


def proposal(tree, node, sender: int) -> ProtocolMsg:
    return ProtocolMsg(
        mtype=MsgType.GENERIC, view=node.height, sender=sender, node=node, ancestors=tuple(tree.branch(node.id)[1:-1])
    )


def vote(crypto, node, sender: int) -> ProtocolMsg:
    payload = QuorumCert.encode(MsgType.GENERIC, node.height, node.id)
    return ProtocolMsg(
        mtype=MsgType.GENERIC, view=node.height, sender=sender, node=node, partial_sig=crypto.tsign(sender, payload)
    )


def locked_fork(tree, signer):
    """副本锁在 x2; y2 不延伸锁, 但其 justify(y1, 高度 3)由 signer 签名且高于锁"""
    xs = grow(tree, [1, 2], prefix="x")
    y1 = tree.create_leaf(tree.genesis.id, "y1", tree.genesis_qc, 3)
    y2 = tree.create_leaf(y1.id, "y2", full_qc(signer, y1), 4)
    return xs, y1, y2


def test_vote_requires_increasing_height(tree):
    (a,) = grow(tree, [3])
    assert should_vote(tree, a, vheight=2, b_lock=tree.genesis)
    assert not should_vote(tree, a, vheight=3, b_lock=tree.genesis)


def test_vote_safety_and_liveness_rules(tree):
    xs = grow(tree, [1, 2], prefix="x")
    ys = grow(tree, [3, 4, 5], prefix="y")
    # 延伸锁
    assert should_vote(tree, xs[1], vheight=1, b_lock=xs[0])
    # 不延伸锁, justify 也不高于锁
    assert not should_vote(tree, ys[0], vheight=2, b_lock=xs[1])
    # 不延伸锁, 但 justify(y1, 高度 3) 高于锁(x2, 高度 2)
    assert should_vote(tree, ys[1], vheight=2, b_lock=xs[1])


def test_vheight_variant_allows_lower_heights(tree):
    (a,) = grow(tree, [1])
    assert not should_vote(tree, a, vheight=4, b_lock=tree.genesis)
    assert should_vote(
        tree, a, vheight=4, b_lock=tree.genesis, voted_heights={4}, variant=NegativeVariant.VHEIGHT
    )
    assert not should_vote(
        tree, a, vheight=4, b_lock=tree.genesis, voted_heights={1, 4}, variant=NegativeVariant.VHEIGHT
    )


def test_three_phase_plan(tree):
    a, b, c, d = grow(tree, [1, 2, 3, 4])
    plan = plan_update(tree, d)
    assert plan.qc == d.justify
    assert plan.lock == b
    assert plan.commit == a


def test_three_phase_needs_direct_parents(tree):
    a, b, c, d = grow(tree, [1, 2, 4, 5])
    plan = plan_update(tree, d)
    assert plan.lock == b
    assert plan.commit is None
    relaxed = plan_update(tree, d, variant=NegativeVariant.DIRECT_PARENT)
    assert relaxed.commit == a


def test_two_phase_plan(tree):
    a, b, c = grow(tree, [1, 2, 3])
    plan = plan_update(tree, c, mode=UpdateMode.TWO_PHASE)
    assert plan.lock == b
    assert plan.commit == a


def test_ideal_run_decides():
    trace = Simulator(Scenario(protocol=Protocol.EVENT, max_views=20)).run()
    report = audit(trace)
    assert report.ok, report.notes
    assert trace.stopped_by == "views"
    latencies = pipeline_latencies(trace)
    assert len(latencies) >= 16
    assert all(commit == proposed + 3 for proposed, commit in latencies)


def test_two_phase_commits_two_views_later():
    trace = Simulator(Scenario(protocol=Protocol.TWO_PHASE, max_views=12)).run()
    assert audit(trace).ok
    latencies = pipeline_latencies(trace)
    assert latencies
    assert all(commit == proposed + 2 for proposed, commit in latencies)


def test_forged_justify_gets_no_vote(crypto, tree):
    xs, y1, y2 = locked_fork(tree, MockCryptoProvider(4, 1, seed=999))
    replica = make_replica(2, crypto, tree)
    replica.b_lock, replica.vheight = xs[1], 2

    out = replica.step(proposal(tree, y2, sender=replica.leader(4)))
    assert not out.sends
    assert replica.vheight == 2
    assert replica.qc_high == replica.tree.genesis_qc
    assert replica.view == 1
    with pytest.raises(InvalidQC):
        replica.on_receive_proposal(y2)


def test_valid_justify_above_lock_gets_vote(crypto, tree):
    xs, y1, y2 = locked_fork(tree, crypto)
    replica = make_replica(2, crypto, tree)
    replica.b_lock, replica.vheight = xs[1], 2

    out = replica.step(proposal(tree, y2, sender=replica.leader(4)))
    assert [(e.dest, e.msg.view) for e in out.sends if e.msg.is_vote] == [(replica.leader(5), 4)]
    assert replica.vheight == 4
    assert replica.qc_high.node == y1.id
    assert replica.b_lock == xs[1]
    assert replica.view == 5


def test_far_proposal_does_not_advance_view(crypto, tree):
    far = tree.create_leaf(tree.genesis.id, "far", tree.genesis_qc, 49)
    replica = make_replica(3, crypto)
    out = replica.step(proposal(tree, far, sender=replica.leader(49)))
    # 投票照常进行, 但 justify 不是上一高度的 QC, 视图不跟随
    assert [e.dest for e in out.sends if e.msg.is_vote] == [replica.leader(50)]
    assert replica.view == 1


def test_proposal_advances_view_only_from_its_leader(crypto, tree):
    a, b = grow(tree, [1, 2])
    replica = make_replica(3, crypto)
    replica.step(proposal(tree, b, sender=1))
    assert replica.view == 1
    replica.step(proposal(tree, b, sender=replica.leader(2)))
    assert replica.view == 3


def test_qc_high_keeps_first_of_equal_height(crypto, tree):
    xs = grow(tree, [1, 2], prefix="x")
    (y,) = grow(tree, [2], prefix="y")
    replica = make_replica(0, crypto, tree)
    assert replica.update_qc_high(full_qc(crypto, xs[1]))
    assert not replica.update_qc_high(full_qc(crypto, y))
    assert not replica.update_qc_high(full_qc(crypto, xs[0]))
    assert replica.qc_high.node == xs[1].id
    assert replica.b_leaf == xs[1]
    with pytest.raises(InvalidQC):
        replica.update_qc_high(full_qc(MockCryptoProvider(4, 1, seed=999), y))


def test_duplicate_signers_do_not_form_qc(crypto, tree):
    (a,) = grow(tree, [1])
    replica = make_replica(0, crypto, tree)
    for sender in [2, 2, 3]:
        assert replica.on_receive_vote(vote(crypto, a, sender)) is None
    qc = replica.on_receive_vote(vote(crypto, a, 0))
    assert qc is not None
    assert crypto.tverify(qc.payload, qc.sig)
    assert replica.qc_high == qc
    # 已经合成过的 QC 不再重复合成
    assert replica.on_receive_vote(vote(crypto, a, 1)) is None


def test_commit_is_idempotent_and_rejects_conflicts(crypto, tree):
    a, b = grow(tree, [1, 2])
    (c,) = grow(tree, [3], prefix="c")
    replica = make_replica(0, crypto, tree)
    assert replica.on_commit(b) == ["n0", "n1"]
    assert replica.on_commit(b) == []
    assert replica.on_commit(a) == []
    assert replica.executed == ["n0", "n1"]
    with pytest.raises(ConflictingCommit):
        replica.on_commit(c)
    assert replica.b_exec == b


def test_only_the_leader_proposes(crypto):
    replica = make_replica(0, crypto)
    with pytest.raises(NotLeader):
        replica.on_propose(1)
    msg = replica.on_propose(4)
    assert msg.node.height == 4
    assert msg.node.justify == replica.tree.genesis_qc
    assert replica.b_leaf == msg.node


def test_fixed_interval_beats_drive_progress():
    pacemaker = PacemakerConfig(beat_policy=BeatPolicy.FIXED_INTERVAL, beat_interval=30, base_timeout=100)
    trace = Simulator(Scenario(protocol=Protocol.EVENT, pacemaker=pacemaker, max_views=12)).run()
    report = audit(trace)
    assert report.ok, report.notes
    assert trace.executed[0]
