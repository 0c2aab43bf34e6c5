from .BlockTree import BlockTree
from .model.Base import (
    InvalidNode,
    InvalidPartialSig,
    InvalidQC,
    MsgType,
    NotFromLeader,
    QuorumNotReached,
    UnsafeNode,
    WrongView,
)
from .model.MsgModel import ProtocolMsg, TimerFire, TimerKind
from .model.TraceModel import TraceKind
from .model.TreeModel import ChainReport, Node, QuorumCert
from .replicatype.BaseReplica import BaseReplica
from .utils.Logger import log


def classify_chain(tree: BlockTree, b_star: Node) -> ChainReport:
    """判定以 b_star 为尾的 One/Two/Three-Chain

    b'' = b_star.justify.node, b' = b''.justify.node, b = b'.justify.node,
    每一环都要求 justify 指向直接父节点, 跨过空白节点的不算.

    Raises:
        UnknownNode: justify 链上的节点不在树中
    """
    b2 = tree.justified(b_star)
    if b2 is None or b_star.parent != b2.id:
        return ChainReport()
    b1 = tree.justified(b2)
    if b1 is None or b2.parent != b1.id:
        return ChainReport(one_chain=b2)
    b0 = tree.justified(b1)
    if b0 is None or b1.parent != b0.id:
        return ChainReport(one_chain=b2, two_chain=b1)
    return ChainReport(one_chain=b2, two_chain=b1, three_chain=b0)


class ChainedReplica(BaseReplica):
    """Chained HotStuff 副本: 每个视图只有一个 GENERIC 阶段

    视图 v 的投票发给 leader(v+1), 由它合成 genericQC 并在其上提案,
    相当于把 PRE-COMMIT 阶段交给下一任领导者, 各阶段因此流水化.
    """

    protocol = "chained"
    padded = True

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.generic_qc: QuorumCert = self.tree.genesis_qc
        self.locked_qc: QuorumCert | None = None
        self.vote_log: set[int] = set()
        self.new_views: dict[int, dict[int, ProtocolMsg]] = {}
        self.proposed: set[int] = set()

    # ==========================================================
    # 视图切换
    # ==========================================================

    def on_start(self) -> None:
        self.enter_view(1, reason="start")
        if self.leader(1) == self.me and self.may_propose(1):
            self.propose(1, self.generic_qc)

    def enter_view(self, view: int, *, reason: str) -> None:
        self.view = view
        self.record(TraceKind.ENTER_VIEW, view=view, reason=reason)
        self.set_timer(view, self.pacemaker.current_timeout())
        for old in [v for v in self.new_views if v < view]:
            del self.new_views[old]

    def on_timer(self, fire: TimerFire) -> None:
        if fire.kind == TimerKind.VIEW and fire.view == self.view:
            self.on_timeout()

    def on_timeout(self) -> None:
        """超时: 把 genericQC 通过 NEW-VIEW 发给下一任领导者"""
        self.record(TraceKind.TIMEOUT, view=self.view)
        self.pacemaker.backoff()
        self.enter_view(self.view + 1, reason="timeout")
        qc = self.generic_qc
        node = self.tree.get(qc.node)
        msg = ProtocolMsg(
            mtype=MsgType.NEW_VIEW,
            view=self.view,
            sender=self.me,
            node=node,
            justify=qc,
            ancestors=self.ancestors_of(node),
        )
        self.send(self.leader(self.view), msg)

    # ==========================================================
    # 消息分发
    # ==========================================================

    def on_message(self, msg: ProtocolMsg) -> None:
        if msg.mtype == MsgType.NEW_VIEW:
            self.on_new_view(msg)
        elif msg.is_vote:
            self.on_vote(msg)
        elif msg.mtype == MsgType.GENERIC:
            if msg.view < self.view:
                self.on_stale_generic(msg)
                return
            if msg.view > self.view:
                if not self.may_catch_up(msg):
                    log.debug(f"副本 {self.me} 不追赶到视图 {msg.view}(当前视图 {self.view})")
                    return
                self.enter_view(msg.view, reason="catch-up")
            self.on_generic(msg)

    def may_catch_up(self, msg: ProtocolMsg) -> bool:
        """来自 leader(msg.view) 且 justify 校验通过; 领先超过一个视图时 justify 必须来自上一视图"""
        if msg.sender != self.leader(msg.view) or msg.node is None or msg.node.height != msg.view:
            return False
        qc = msg.node.justify
        if qc is None or not self.verify_qc(qc):
            return False
        return msg.view == self.view + 1 or qc.view + 1 >= msg.view

    # ==========================================================
    # 领导者
    # ==========================================================

    def propose(self, view: int, qc: QuorumCert) -> ProtocolMsg:
        """在 qc 所指节点上创建高度为 view 的叶子(中间补空白节点)并广播"""
        parent = self.tree.get(qc.node)
        leaf = self.tree.create_leaf(parent.id, self.next_command(view), qc, view)
        self.proposed.add(view)
        self.record(TraceKind.PROPOSE, view=view, node=leaf.id, height=leaf.height, cmd=leaf.cmd)
        msg = ProtocolMsg(
            mtype=MsgType.GENERIC,
            view=view,
            sender=self.me,
            node=leaf,
            ancestors=self.ancestors_of(leaf),
        )
        self.broadcast(msg)
        return msg

    def adopt_generic_qc(self, qc: QuorumCert) -> None:
        if qc.view > self.generic_qc.view:
            self.generic_qc = qc
            self.record(TraceKind.QC_HIGH, view=self.view, node=qc.node, qc_view=qc.view)

    def try_propose(self, view: int) -> None:
        if view < self.view or view in self.proposed or not self.may_propose(view):
            return
        if self.leader(view) != self.me:
            return
        if view > self.view:
            self.enter_view(view, reason="leader")
        self.propose(view, self.generic_qc)

    def on_vote(self, msg: ProtocolMsg) -> None:
        if msg.mtype != MsgType.GENERIC or self.leader(msg.view + 1) != self.me:
            return
        if msg.view + 1 < self.view or not self.ingest(msg):
            return
        qc = self.collect_vote(msg)
        if qc is not None:
            self.adopt_generic_qc(qc)
            self.try_propose(msg.view + 1)

    def leader_on_generic_votes(self, votes: list[ProtocolMsg]) -> ProtocolMsg:
        """用上一视图的 n−f 张 GENERIC 投票合成 genericQC, 在本视图提案

        Raises:
            QuorumNotReached: 有效投票不足, 需要走 NEW-VIEW 路径
        """
        for vote in votes:
            if not vote.is_vote or vote.view + 1 != self.view:
                continue
            self.ingest(vote)
            try:
                qc = self.collect_vote(vote)
            except InvalidPartialSig as e:
                log.debug(f"领导者 {self.me} 忽略投票: {e}")
                continue
            if qc is not None:
                self.adopt_generic_qc(qc)
                return self.propose(self.view, self.generic_qc)
        raise QuorumNotReached(f"视图 {self.view - 1} 的 GENERIC 投票不足 {self.quorum}")

    def on_new_view(self, msg: ProtocolMsg) -> None:
        if self.leader(msg.view) != self.me or msg.view < self.view or msg.view in self.proposed:
            return
        if msg.justify is None or not self.verify_qc(msg.justify):
            raise InvalidQC(f"副本 {msg.sender} 的 NEW-VIEW 携带无效 genericQC")
        if not self.ingest(msg):
            return
        self.adopt_generic_qc(msg.justify)
        bucket = self.new_views.setdefault(msg.view, {})
        bucket[msg.sender] = msg
        if len(bucket) >= self.quorum:
            self.try_propose(msg.view)

    # ==========================================================
    # 副本
    # ==========================================================

    def safe_node(self, node: Node, qc: QuorumCert | None) -> bool:
        if self.locked_qc is None:
            return True
        if self.tree.extends(node.id, self.locked_qc.node):
            return True
        return qc is not None and qc.view > self.locked_qc.view

    def apply_chain(self, b_star: Node, qc: QuorumCert) -> ChainReport:
        """按 b_star 的链长度依次更新 genericQC, lockedQC 并提交"""
        report = classify_chain(self.tree, b_star)
        self.adopt_generic_qc(qc)
        if report.two_chain is not None:
            b2 = report.one_chain
            assert b2 is not None and b2.justify is not None
            if self.locked_qc is None or b2.justify.view > self.locked_qc.view:
                self.locked_qc = b2.justify
                self.record(TraceKind.LOCK, view=self.view, node=b2.justify.node, height=report.two_chain.height)
        if report.three_chain is not None:
            self.on_commit(report.three_chain, at_view=b_star.height)
        return report

    def on_stale_generic(self, msg: ProtocolMsg) -> None:
        """已离开的视图的提案: 不投票, 只更新链状态"""
        if msg.sender != self.leader(msg.view) or msg.node is None or not self.ingest(msg):
            return
        qc = msg.node.justify
        if qc is not None and self.verify_qc(qc):
            self.apply_chain(msg.node, qc)

    def on_generic(self, msg: ProtocolMsg) -> None:
        """投票(若安全), 再按链长度更新 genericQC, 锁与提交, 然后进入下一视图

        Raises:
            WrongView: 消息不属于当前视图
            NotFromLeader: 发送者不是当前视图的领导者
            InvalidNode: 提案高度不等于视图号
            InvalidQC: 提案的 justify 校验失败
            UnsafeNode: 提案不满足 safeNode, 不投票(状态仍然更新)
        """
        if msg.view != self.view:
            raise WrongView(f"GENERIC 视图 {msg.view} != 当前视图 {self.view}")
        if msg.sender != self.leader(self.view):
            raise NotFromLeader(f"副本 {msg.sender} 不是视图 {self.view} 的领导者")
        if msg.node is None:
            return
        b_star = msg.node
        if b_star.height != msg.view:
            raise InvalidNode(f"提案 {b_star.short} 高度 {b_star.height} != 视图 {msg.view}")
        if not self.ingest(msg):
            return
        qc = b_star.justify
        if qc is None or not self.verify_qc(qc):
            raise InvalidQC(f"提案 {b_star.short} 的 justify 无效")

        safe = self.safe_node(b_star, qc)
        if safe and self.view not in self.vote_log:
            self.vote_log.add(self.view)
            self.send(self.leader(self.view + 1), self.make_vote(MsgType.GENERIC, self.view, b_star))

        self.apply_chain(b_star, qc)

        self.enter_view(self.view + 1, reason="generic")
        if not safe:
            raise UnsafeNode(f"提案 {b_star.short} 不满足 safeNode, 未投票")
