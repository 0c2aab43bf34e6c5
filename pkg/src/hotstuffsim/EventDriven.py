from collections.abc import Collection

from .BlockTree import BlockTree
from .model.Base import InvalidQC, MsgType, NegativeVariant, NotLeader, UpdateMode
from .model.ConfigModel import BeatPolicy
from .model.MsgModel import ProtocolMsg, TimerFire, TimerKind
from .model.TraceModel import TraceKind
from .model.TreeModel import Node, QuorumCert, UpdatePlan
from .replicatype.BaseReplica import BaseReplica
from .utils.Logger import log

# ==========================================================
# 纯规则函数, 副本与穷举搜索共用
# ==========================================================


def should_vote(
    tree: BlockTree,
    b_new: Node,
    *,
    vheight: int,
    b_lock: Node,
    voted_heights: Collection[int] = (),
    variant: NegativeVariant | None = None,
) -> bool:
    """投票规则: 高度单调递增, 且延伸锁定节点或 justify 高于锁

    variant=VHEIGHT 时只要求每个高度最多投一次, 不要求单调.
    """
    if variant == NegativeVariant.VHEIGHT:
        fresh = b_new.height not in voted_heights
    else:
        fresh = b_new.height > vheight
    if not fresh:
        return False
    if tree.extends(b_new.id, b_lock.id):
        return True
    justified = tree.justified(b_new)
    return justified is not None and justified.height > b_lock.height


def plan_update(
    tree: BlockTree,
    b_star: Node,
    *,
    mode: UpdateMode = UpdateMode.THREE_PHASE,
    variant: NegativeVariant | None = None,
) -> UpdatePlan:
    """计算收到 b* 后的 qc_high / 锁 / 提交目标

    三阶段: b'' = b*.justify.node, b' = b''.justify.node, b = b'.justify.node;
    锁取 b', 仅当 b'' → b' → b 均为直接父子时提交 b.
    两阶段: b' = b*.justify.node, b = b'.justify.node; 锁取 b', b' 的父节点是 b 时提交 b.
    variant=DIRECT_PARENT 时提交只要求祖先关系.
    """
    relaxed = variant == NegativeVariant.DIRECT_PARENT
    if mode == UpdateMode.TWO_PHASE:
        b1 = tree.justified(b_star)
        if b1 is None:
            return UpdatePlan(qc=b_star.justify)
        b0 = tree.justified(b1)
        commit = b0 if b0 is not None and (relaxed or b1.parent == b0.id) else None
        return UpdatePlan(qc=b_star.justify, lock=b1, commit=commit)

    b2 = tree.justified(b_star)
    if b2 is None:
        return UpdatePlan(qc=b_star.justify)
    b1 = tree.justified(b2)
    if b1 is None:
        return UpdatePlan(qc=b_star.justify)
    b0 = tree.justified(b1)
    commit = None
    if b0 is not None and (relaxed or (b2.parent == b1.id and b1.parent == b0.id)):
        commit = b0
    return UpdatePlan(qc=b_star.justify, lock=b1, commit=commit)


class EventDrivenReplica(BaseReplica):
    """事件驱动 HotStuff 副本

    安全相关的状态只有 vheight, b_lock, b_exec, qc_high, b_leaf;
    何时提案, 何时切换视图全部交给 Pacemaker.

    Args:
        mode: THREE_PHASE 为标准规则, TWO_PHASE 为两阶段变体
        variant: 仅测试使用的弱化规则
    """

    protocol = "event"
    padded = True

    def __init__(
        self,
        *args,
        mode: UpdateMode = UpdateMode.THREE_PHASE,
        variant: NegativeVariant | None = None,
        **kwargs,
    ):
        super().__init__(*args, **kwargs)
        self.mode = mode
        self.variant = variant
        if mode == UpdateMode.TWO_PHASE:
            self.protocol = "two-phase"
        self.vheight = 0
        self.voted_heights: set[int] = set()
        self.b_lock: Node = self.tree.genesis
        self.qc_high: QuorumCert = self.tree.genesis_qc
        self.b_leaf: Node = self.tree.genesis
        self.proposed: set[int] = set()

    # ==========================================================
    # 启动与定时器
    # ==========================================================

    def on_start(self) -> None:
        self.enter_view(1, reason="start")
        if self.pacemaker.config.beat_policy == BeatPolicy.FIXED_INTERVAL:
            self.set_timer(1, self.pacemaker.config.beat_interval, TimerKind.BEAT)
        if self.may_propose(1):
            self.pacemaker.on_beat(self, 1)

    def enter_view(self, view: int, *, reason: str) -> None:
        self.view = view
        self.record(TraceKind.ENTER_VIEW, view=view, reason=reason)
        self.set_timer(view, self.pacemaker.current_timeout())

    def on_timer(self, fire: TimerFire) -> None:
        if fire.kind == TimerKind.BEAT:
            self.on_beat_timer()
        elif fire.view == self.view:
            self.on_timeout()

    def on_beat_timer(self) -> None:
        height = max(self.view, self.b_leaf.height + 1)
        if height not in self.proposed and self.may_propose(height):
            self.pacemaker.on_beat(self, height)
        if self.may_propose(self.view):
            self.set_timer(self.view, self.pacemaker.config.beat_interval, TimerKind.BEAT)

    def on_timeout(self) -> None:
        """本地超时: 进入下一视图, 把 qc_high 发给新领导者; 稳定领导者直接提案"""
        self.record(TraceKind.TIMEOUT, view=self.view)
        view = self.view + 1
        msg = self.pacemaker.on_next_sync_view(self, view)
        self.enter_view(view, reason="timeout")
        self.send(self.leader(view), msg)
        if self.pacemaker.is_stable(view) and self.leader(view) == self.me:
            if view not in self.proposed and self.may_propose(view):
                self.on_propose(view)

    # ==========================================================
    # 消息分发
    # ==========================================================

    def on_message(self, msg: ProtocolMsg) -> None:
        if not self.ingest(msg):
            return
        if msg.mtype == MsgType.NEW_VIEW:
            self.on_new_view(msg)
        elif msg.is_vote:
            self.on_receive_vote(msg)
        elif msg.mtype == MsgType.GENERIC and msg.node is not None:
            self.on_receive_proposal(msg.node)
            self.advance_on_proposal(msg.sender, msg.node)

    def on_new_view(self, msg: ProtocolMsg) -> None:
        ready = self.pacemaker.on_receive_new_view(self, msg)
        if not ready or msg.view in self.proposed or not self.may_propose(msg.view):
            return
        if msg.view > self.view:
            self.enter_view(msg.view, reason="new-view")
        self.on_propose(msg.view)

    # ==========================================================
    # 核心规则
    # ==========================================================

    def update_qc_high(self, qc: QuorumCert) -> bool:
        """qc 所指节点更高时替换 qc_high 并把 b_leaf 移到该节点, 等高保留原值

        Raises:
            InvalidQC: 签名校验失败
        """
        if not self.verify_qc(qc):
            raise InvalidQC(f"QC {qc.node[:8]} 签名校验失败")
        node = self.tree.get(qc.node)
        if node.height <= self.tree.get(self.qc_high.node).height:
            return False
        self.qc_high = qc
        self.b_leaf = node
        self.record(TraceKind.QC_HIGH, view=self.view, node=node.id, height=node.height)
        return True

    def apply_plan(self, plan: UpdatePlan, at_view: int) -> None:
        if plan.qc is not None:
            self.update_qc_high(plan.qc)
        if plan.lock is not None and plan.lock.height > self.b_lock.height:
            self.b_lock = plan.lock
            self.record(TraceKind.LOCK, view=self.view, node=plan.lock.id, height=plan.lock.height)
        if plan.commit is not None:
            self.on_commit(plan.commit, at_view=at_view)

    def update(self, b_star: Node) -> None:
        """三阶段更新: qc_high 与锁允许间接链, 提交要求 b'' → b' → b 直接相连"""
        self.apply_plan(plan_update(self.tree, b_star, variant=self.variant), b_star.height)

    def two_phase_update(self, b_star: Node) -> None:
        """两阶段更新: 一条 QC 决定锁, 两条直接相连的 QC 即可提交"""
        plan = plan_update(self.tree, b_star, mode=UpdateMode.TWO_PHASE, variant=self.variant)
        self.apply_plan(plan, b_star.height)

    def verify_justify_chain(self, b_new: Node) -> None:
        """校验 b_new 的 justify 以及更新规则沿 justify 链会用到的 QC

        Raises:
            InvalidQC: b_new 没有 justify, 或链上某个 QC 签名校验失败
        """
        if b_new.justify is None:
            raise InvalidQC(f"提案 {b_new.short} 没有 justify")
        depth = 2 if self.mode == UpdateMode.TWO_PHASE else 3
        node: Node | None = b_new
        for _ in range(depth):
            if node is None or node.justify is None:
                return
            if not self.verify_qc(node.justify):
                raise InvalidQC(f"节点 {node.short} 的 justify 签名校验失败")
            node = self.tree.justified(node)

    def on_receive_proposal(self, b_new: Node) -> ProtocolMsg | None:
        """justify 链校验通过后, 满足投票规则时投票给 leader(height+1); 无论是否投票都执行 update

        Raises:
            InvalidQC: justify 链校验失败, 不投票也不更新
        """
        self.verify_justify_chain(b_new)
        vote = None
        if should_vote(
            self.tree,
            b_new,
            vheight=self.vheight,
            b_lock=self.b_lock,
            voted_heights=self.voted_heights,
            variant=self.variant,
        ):
            self.vheight = max(self.vheight, b_new.height)
            self.voted_heights.add(b_new.height)
            vote = self.make_vote(MsgType.GENERIC, b_new.height, b_new)
            self.send(self.leader(b_new.height + 1), vote)
        else:
            log.debug(f"副本 {self.me} 不对 {b_new.short}(高度 {b_new.height}) 投票")

        if self.mode == UpdateMode.TWO_PHASE:
            self.two_phase_update(b_new)
        else:
            self.update(b_new)
        return vote

    def advance_on_proposal(self, sender: int, b_new: Node) -> None:
        """leader(height) 的提案把副本推进到 height+1

        提案领先当前视图超过一个时, 其 justify 必须来自上一高度.
        """
        if b_new.height < self.view or sender != self.leader(b_new.height):
            return
        if b_new.height > self.view + 1:
            justified = self.tree.justified(b_new)
            if justified is None or justified.height + 1 < b_new.height:
                log.debug(f"副本 {self.me} 不追赶到高度 {b_new.height}(当前视图 {self.view})")
                return
        self.enter_view(b_new.height + 1, reason="proposal")

    def on_receive_vote(self, msg: ProtocolMsg) -> QuorumCert | None:
        """累计投票, 达到 n−f 时合成 QC 并更新 qc_high

        Raises:
            InvalidPartialSig: 部分签名校验失败
        """
        if msg.mtype != MsgType.GENERIC or msg.node is None:
            return None
        qc = self.collect_vote(msg)
        if qc is None:
            return None
        self.update_qc_high(qc)
        if self.pacemaker.config.beat_policy == BeatPolicy.ON_QC:
            target = msg.node.height + 1
            if (
                target >= self.view
                and self.leader(target) == self.me
                and target not in self.proposed
                and self.may_propose(target)
            ):
                self.pacemaker.on_beat(self, target)
        return qc

    def on_propose(self, height: int) -> ProtocolMsg:
        """在 b_leaf 上创建高度为 height 的节点(justify = qc_high)并广播

        Raises:
            NotLeader: 本副本不是 height 的领导者
        """
        if self.leader(height) != self.me:
            raise NotLeader(f"副本 {self.me} 不是高度 {height} 的领导者")
        b_new = self.tree.create_leaf(self.b_leaf.id, self.next_command(height), self.qc_high, height)
        self.b_leaf = b_new
        self.proposed.add(height)
        self.record(TraceKind.PROPOSE, view=height, node=b_new.id, height=height, cmd=b_new.cmd)
        msg = ProtocolMsg(
            mtype=MsgType.GENERIC,
            view=height,
            sender=self.me,
            node=b_new,
            ancestors=self.ancestors_of(b_new),
        )
        self.broadcast(msg)
        return msg
