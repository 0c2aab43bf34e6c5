from pathlib import Path

import pytest

from hotstuffsim.BlockTree import BlockTree
from hotstuffsim.CryptoProvider import MockCryptoProvider
from hotstuffsim.model.Base import MsgType
from hotstuffsim.model.ConfigModel import PacemakerConfig
from hotstuffsim.model.TreeModel import Node, QuorumCert
from hotstuffsim.Pacemaker import Pacemaker

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def crypto() -> MockCryptoProvider:
    return MockCryptoProvider(n=4, f=1, seed=0, track_collisions=True)


@pytest.fixture
def tree(crypto) -> BlockTree:
    return BlockTree(crypto, padded=True)


@pytest.fixture
def pacemaker() -> Pacemaker:
    return Pacemaker(PacemakerConfig(), n=4, f=1)


def full_qc(crypto: MockCryptoProvider, node: Node, qtype: MsgType = MsgType.GENERIC) -> QuorumCert:
    """所有副本签名的 QC, 视图取节点高度"""
    payload = QuorumCert.encode(qtype, node.height, node.id)
    parts = {crypto.tsign(i, payload) for i in range(crypto.n)}
    return QuorumCert(qtype=qtype, view=node.height, node=node.id, sig=crypto.tcombine(payload, parts))


def grow(tree: BlockTree, heights: list[int], *, parent: Node | None = None, prefix: str = "n") -> list[Node]:
    """在 parent 上按给定高度依次创建节点, 每个节点携带前一个节点的 QC"""
    base = parent or tree.genesis
    qc = tree.genesis_qc if parent is None else full_qc(tree.crypto, parent)
    out = []
    for i, h in enumerate(heights):
        node = tree.create_leaf(base.id, f"{prefix}{i}", qc, h)
        out.append(node)
        base, qc = node, full_qc(tree.crypto, node)
    return out
