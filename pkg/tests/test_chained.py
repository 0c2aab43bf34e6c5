import pytest
from conftest import full_qc, grow

from hotstuffsim.ChainedHotStuff import ChainedReplica, classify_chain
from hotstuffsim.model.Base import InvalidNode, MsgType, Protocol, QuorumNotReached
from hotstuffsim.model.ConfigModel import PacemakerConfig, Scenario
from hotstuffsim.model.MsgModel import ProtocolMsg
from hotstuffsim.model.TreeModel import QuorumCert
from hotstuffsim.Oracle import audit, pipeline_latencies
from hotstuffsim.Pacemaker import Pacemaker
from hotstuffsim.SimNet import Simulator


def make_replica(me: int, crypto) -> ChainedReplica:
    replica = ChainedReplica(me, 4, 1, crypto, Pacemaker(PacemakerConfig(), 4, 1))
    replica.start()
    return replica


def generic(tree, node, sender: int, view: int | None = None) -> ProtocolMsg:
    return ProtocolMsg(
        mtype=MsgType.GENERIC,
        view=node.height if view is None else view,
        sender=sender,
        node=node,
        ancestors=tuple(tree.branch(node.id)[1:-1]),
    )


def votes(crypto, node, senders) -> list[ProtocolMsg]:
    payload = QuorumCert.encode(MsgType.GENERIC, node.height, node.id)
    return [
        ProtocolMsg(mtype=MsgType.GENERIC, view=node.height, sender=i, node=node, partial_sig=crypto.tsign(i, payload))
        for i in senders
    ]


def test_three_chain(tree):
    a, b, c, d = grow(tree, [1, 2, 3, 4])
    report = classify_chain(tree, d)
    assert report.one_chain == c
    assert report.two_chain == b
    assert report.three_chain == a


def test_gap_breaks_chain(tree):
    a, b, c, d = grow(tree, [1, 2, 4, 5])
    # c 跨过空白节点指向 b
    assert classify_chain(tree, c).one_chain is None
    report = classify_chain(tree, d)
    assert report.one_chain == c
    assert report.two_chain is None
    assert report.three_chain is None


def test_pipeline_commits_three_views_later():
    trace = Simulator(Scenario(protocol=Protocol.CHAINED, max_views=12)).run()
    report = audit(trace)
    assert report.ok, report.notes
    latencies = pipeline_latencies(trace)
    assert latencies
    assert all(commit == proposed + 3 for proposed, commit in latencies)


def test_next_view_proposal_is_followed(crypto, tree):
    a, b = grow(tree, [1, 2])
    replica = make_replica(0, crypto)
    out = replica.step(generic(tree, b, sender=replica.leader(2)))
    assert replica.view == 3
    assert [e.dest for e in out.sends if e.msg.is_vote] == [replica.leader(3)]


def test_far_proposal_needs_qc_from_previous_view(crypto, tree):
    far = tree.create_leaf(tree.genesis.id, "far", tree.genesis_qc, 41)
    replica = make_replica(0, crypto)
    out = replica.step(generic(tree, far, sender=replica.leader(41)))
    assert replica.view == 1
    assert not out.sends


def test_proposal_height_must_match_view(crypto, tree):
    a, b = grow(tree, [1, 2])
    replica = make_replica(0, crypto)
    with pytest.raises(InvalidNode):
        replica.on_generic(generic(tree, b, sender=replica.leader(1), view=1))
    assert replica.view == 1
    assert replica.vote_log == set()


def test_leader_needs_quorum_of_generic_votes(crypto, tree):
    (a,) = grow(tree, [1])
    leader = make_replica(2, crypto)
    leader.step(generic(tree, a, sender=leader.leader(1)))
    assert leader.view == 2
    with pytest.raises(QuorumNotReached):
        leader.leader_on_generic_votes(votes(crypto, a, [0, 3]))
    msg = leader.leader_on_generic_votes(votes(crypto, a, [1]))
    assert msg.node.height == 2
    assert msg.node.justify.node == a.id


def test_proposal_is_padded_to_view(crypto, tree):
    (a,) = grow(tree, [1])
    replica = make_replica(0, crypto)
    replica.tree.insert(a)
    msg = replica.propose(5, full_qc(crypto, a))
    branch = replica.tree.branch(msg.node.id)
    assert [n.height for n in branch] == [0, 1, 2, 3, 4, 5]
    assert all(n.is_dummy for n in branch[2:5])
    assert branch[1] == a
