from .model.Base import (
    InvalidPartialSig,
    InvalidQC,
    MsgType,
    NotFromLeader,
    NotLeader,
    QuorumNotReached,
    UnsafeNode,
    WrongView,
)
from .model.MsgModel import ProtocolMsg, TimerFire, TimerKind
from .model.TraceModel import TraceKind
from .model.TreeModel import Node, QuorumCert
from .replicatype.BaseReplica import BaseReplica
from .utils.Constants import Phase
from .utils.Logger import log


class BasicReplica(BaseReplica):
    """Basic HotStuff 副本: NEW-VIEW → PREPARE → PRE-COMMIT → COMMIT → DECIDE

    每个视图由 leader(view) 驱动四个阶段, 投票点对点发给当前领导者,
    领导者把 n−f 张投票合成 QC 后广播下一阶段消息(包括发给自己).

    Attributes:
        prepare_qc: 已对其投 PRE-COMMIT 票的最高 QC
        locked_qc: 已对其投 COMMIT 票的最高 QC
        cur_proposal: 当前视图接受的提案
        vote_log: 已投过的 (view, phase)
    """

    protocol = "basic"
    padded = False

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.prepare_qc: QuorumCert | None = None
        self.locked_qc: QuorumCert | None = None
        self.cur_proposal: Node | None = None
        self.vote_log: set[tuple[int, MsgType]] = set()
        # 视图 -> {发送者: NEW-VIEW}
        self.new_views: dict[int, dict[int, ProtocolMsg]] = {}
        self.proposed: set[int] = set()
        # 只缓存下一个视图的消息
        self.buffer: dict[int, list[ProtocolMsg]] = {}

    # ==========================================================
    # 视图切换
    # ==========================================================

    def on_start(self) -> None:
        self.enter_view(1, reason="start")

    def enter_view(self, view: int, *, reason: str, send_new_view: bool = True) -> None:
        """进入 view: 把 prepare_qc 通过 NEW-VIEW 发给 leader(view) 并启动视图定时器"""
        self.view = view
        self.cur_proposal = None
        self.record(TraceKind.ENTER_VIEW, view=view, reason=reason)
        if send_new_view:
            self.send(self.leader(view), self.new_view_msg(view))
        self.set_timer(view, self.pacemaker.current_timeout())
        for msg in self.buffer.pop(view, []):
            self.on_message(msg)
        for old in [v for v in self.buffer if v < view]:
            del self.buffer[old]
        for old in [v for v in self.new_views if v < view]:
            del self.new_views[old]

    def new_view_msg(self, view: int) -> ProtocolMsg:
        qc = self.prepare_qc
        if qc is None:
            return ProtocolMsg(mtype=MsgType.NEW_VIEW, view=view, sender=self.me)
        node = self.tree.get(qc.node)
        return ProtocolMsg(
            mtype=MsgType.NEW_VIEW,
            view=view,
            sender=self.me,
            node=node,
            justify=qc,
            ancestors=self.ancestors_of(node),
        )

    def on_timer(self, fire: TimerFire) -> None:
        if fire.kind == TimerKind.VIEW and fire.view == self.view:
            self.on_timeout()

    def on_timeout(self) -> None:
        """当前视图超时: 超时间隔加倍, 进入下一视图"""
        self.record(TraceKind.TIMEOUT, view=self.view)
        interval = self.pacemaker.backoff()
        log.debug(f"副本 {self.me} 在视图 {self.view} 超时, 新间隔 {interval}")
        self.enter_view(self.view + 1, reason="timeout")

    # ==========================================================
    # 消息分发
    # ==========================================================

    def on_message(self, msg: ProtocolMsg) -> None:
        if msg.view < self.view:
            return
        if msg.view > self.view:
            if self.proves_view(msg):
                self.enter_view(msg.view, reason="catch-up", send_new_view=False)
            elif msg.view == self.view + 1:
                self.buffer.setdefault(msg.view, []).append(msg)
                return
            else:
                log.debug(f"副本 {self.me} 丢弃视图 {msg.view} 的消息(当前视图 {self.view})")
                return

        if msg.mtype == MsgType.NEW_VIEW:
            self.on_new_view(msg)
        elif msg.is_vote:
            self.on_vote(msg)
        elif msg.mtype in Phase.LEADER_MSGS:
            self.on_leader_msg(msg)

    def proves_view(self, msg: ProtocolMsg) -> bool:
        """领导者消息携带的 QC 在 msg.view 形成且校验通过, 说明 n−f 个副本已进入该视图"""
        if msg.is_vote or msg.sender != self.leader(msg.view) or msg.mtype not in Phase.CARRIES:
            return False
        qc = msg.justify
        return (
            qc is not None
            and qc.qtype == Phase.CARRIES[msg.mtype]
            and qc.view == msg.view
            and self.verify_qc(qc)
        )

    # ==========================================================
    # 领导者
    # ==========================================================

    def on_new_view(self, msg: ProtocolMsg) -> None:
        if self.leader(msg.view) != self.me or msg.view in self.proposed:
            return
        if msg.justify is not None:
            if msg.justify.qtype != MsgType.PREPARE or not self.verify_qc(msg.justify):
                raise InvalidQC(f"副本 {msg.sender} 的 NEW-VIEW 携带无效 prepareQC")
            if not self.ingest(msg):
                return
        bucket = self.new_views.setdefault(msg.view, {})
        bucket[msg.sender] = msg
        if len(bucket) >= self.quorum and self.may_propose(msg.view):
            self.leader_on_new_view(list(bucket.values()))

    def leader_on_new_view(self, msgs: list[ProtocolMsg]) -> ProtocolMsg:
        """选出 n−f 条 NEW-VIEW 中视图最高的 prepareQC 作为 highQC, 在其节点上提案

        Raises:
            NotLeader: 本副本不是当前视图的领导者
            QuorumNotReached: 当前视图的 NEW-VIEW 少于 n−f 条
        """
        if self.leader(self.view) != self.me:
            raise NotLeader(f"副本 {self.me} 不是视图 {self.view} 的领导者")
        senders = {m.sender for m in msgs if m.mtype == MsgType.NEW_VIEW and m.view == self.view}
        if len(senders) < self.quorum:
            raise QuorumNotReached(f"视图 {self.view} 只收到 {len(senders)} 条 NEW-VIEW")

        high_qc: QuorumCert | None = None
        for m in msgs:
            if m.justify is not None and (high_qc is None or m.justify.view > high_qc.view):
                high_qc = m.justify
        parent = self.tree.get(high_qc.node) if high_qc is not None else self.tree.genesis
        leaf = self.tree.create_leaf(parent.id, self.next_command(self.view), high_qc, parent.height + 1)
        self.proposed.add(self.view)
        self.record(TraceKind.PROPOSE, view=self.view, node=leaf.id, height=leaf.height, cmd=leaf.cmd)
        proposal = ProtocolMsg(
            mtype=MsgType.PREPARE,
            view=self.view,
            sender=self.me,
            node=leaf,
            justify=high_qc,
            ancestors=self.ancestors_of(leaf),
        )
        self.broadcast(proposal)
        return proposal

    def on_vote(self, msg: ProtocolMsg) -> None:
        if self.leader(msg.view) != self.me or msg.mtype not in Phase.NEXT:
            return
        self.ingest(msg)
        qc = self.collect_vote(msg)
        if qc is not None:
            self.broadcast_phase(qc)

    def leader_on_votes(self, phase: MsgType, votes: list[ProtocolMsg]) -> ProtocolMsg:
        """一次性处理一组投票: 校验后计数, 凑齐 n−f 个不同签名者即广播下一阶段

        部分签名无效的投票被忽略, 同一签名者的重复投票只计一次.

        Raises:
            QuorumNotReached: 同一 (phase, view, node) 的有效投票不足 n−f
        """
        for vote in votes:
            if vote.mtype != phase or vote.view != self.view or not vote.is_vote:
                continue
            self.ingest(vote)
            try:
                qc = self.collect_vote(vote)
            except InvalidPartialSig as e:
                log.debug(f"领导者 {self.me} 忽略投票: {e}")
                continue
            if qc is not None:
                return self.broadcast_phase(qc)
        raise QuorumNotReached(f"视图 {self.view} 的 {phase.value} 投票不足 {self.quorum}")

    def broadcast_phase(self, qc: QuorumCert) -> ProtocolMsg:
        node = self.tree.get(qc.node)
        msg = ProtocolMsg(
            mtype=Phase.NEXT[qc.qtype],
            view=qc.view,
            sender=self.me,
            node=node,
            justify=qc,
            ancestors=self.ancestors_of(node),
        )
        self.broadcast(msg)
        return msg

    # ==========================================================
    # 副本
    # ==========================================================

    def safe_node(self, node: Node, qc: QuorumCert | None) -> bool:
        """安全规则(延伸锁定分支) 或 活性规则(qc 视图高于锁)"""
        if self.locked_qc is None:
            return True
        if self.tree.extends(node.id, self.locked_qc.node):
            return True
        qc_view = qc.view if qc is not None else 0
        return qc_view > self.locked_qc.view

    def on_leader_msg(self, msg: ProtocolMsg) -> None:
        """处理领导者的 PREPARE / PRE-COMMIT / COMMIT / DECIDE

        Raises:
            WrongView: 消息不属于当前视图
            NotFromLeader: 发送者不是当前视图的领导者
            InvalidQC: 携带的证书类型或签名不符
            UnsafeNode: 提案不满足 safeNode, 不投票
        """
        if msg.view != self.view:
            raise WrongView(f"消息视图 {msg.view} != 当前视图 {self.view}")
        if msg.sender != self.leader(self.view):
            raise NotFromLeader(f"副本 {msg.sender} 不是视图 {self.view} 的领导者")
        if msg.node is None or not self.ingest(msg):
            return

        if msg.mtype == MsgType.PREPARE:
            self.on_prepare(msg)
            return

        qc = msg.justify
        expected = Phase.CARRIES[msg.mtype]
        if qc is None or qc.qtype != expected or qc.view != self.view or qc.node != msg.node.id:
            raise InvalidQC(f"{msg.mtype.value} 消息应携带视图 {self.view} 的 {expected.value} QC")
        if not self.verify_qc(qc):
            raise InvalidQC(f"{expected.value} QC 签名校验失败")
        node = self.tree.get(qc.node)

        if msg.mtype == MsgType.PRE_COMMIT:
            if self.prepare_qc is None or qc.view > self.prepare_qc.view:
                self.prepare_qc = qc
                self.record(TraceKind.PREPARE_QC, view=self.view, node=node.id, qc_view=qc.view)
            self.vote(MsgType.PRE_COMMIT, node)
        elif msg.mtype == MsgType.COMMIT:
            if self.locked_qc is None or qc.view > self.locked_qc.view:
                self.locked_qc = qc
                self.record(TraceKind.LOCK, view=self.view, node=node.id, qc_view=qc.view, height=node.height)
            self.vote(MsgType.COMMIT, node)
        elif msg.mtype == MsgType.DECIDE:
            self.on_commit(node)
            self.enter_view(self.view + 1, reason="decide")

    def on_prepare(self, msg: ProtocolMsg) -> None:
        node = msg.node
        assert node is not None
        qc = msg.justify
        if qc is not None:
            if qc.qtype != MsgType.PREPARE or not self.verify_qc(qc):
                raise InvalidQC("PREPARE 携带的 highQC 无效")
            extends_qc = node.parent == qc.node
        else:
            extends_qc = node.parent == self.tree.genesis.id
        if not extends_qc:
            raise UnsafeNode(f"提案 {node.short} 不延伸其 justify 节点")
        if not self.safe_node(node, qc):
            raise UnsafeNode(f"提案 {node.short} 不满足 safeNode")
        self.cur_proposal = node
        self.vote(MsgType.PREPARE, node)

    def vote(self, phase: MsgType, node: Node) -> None:
        key = (self.view, phase)
        if key in self.vote_log:
            return
        self.vote_log.add(key)
        self.send(self.leader(self.view), self.make_vote(phase, self.view, node))
