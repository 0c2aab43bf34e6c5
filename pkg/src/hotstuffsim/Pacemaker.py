import hashlib
from typing import TYPE_CHECKING

from pydantic import validate_call

from .model.Base import InvalidQC, MsgType
from .model.ConfigModel import PacemakerConfig, PacemakerKind
from .model.MsgModel import ProtocolMsg
from .utils.Logger import log

if TYPE_CHECKING:
    from .EventDriven import EventDrivenReplica


class Pacemaker:
    """活性模块: 领导者选举, NEW-VIEW 同步, 指数退避超时与提案节奏

    安全性与 Pacemaker 完全解耦, 任何 Pacemaker(包括 CHAOS)都不会破坏安全性.
    """

    def __init__(self, config: PacemakerConfig, n: int, f: int):
        self.config = config
        self.n = n
        self.f = f
        self.timeout = config.base_timeout
        # 高度 -> {发送者: NEW-VIEW}
        self.new_views: dict[int, dict[int, ProtocolMsg]] = {}

    # -------------------- 领导者 --------------------

    @validate_call
    def get_leader(self, height: int) -> int:
        """高度到副本编号的确定性映射, 所有副本计算结果一致

        ROUND_ROBIN: (height // rotation_interval) mod n;
        CHAOS: 由 (seed, height) 决定的伪随机编号.
        """
        if height < 0:
            raise ValueError("height 不能为负")
        if self.config.kind == PacemakerKind.CHAOS:
            digest = hashlib.sha256(f"chaos|{self.config.seed}|{height}".encode()).digest()
            return int.from_bytes(digest[:8], "big") % self.n
        return (height // self.config.rotation_interval) % self.n

    # -------------------- 超时 --------------------

    def current_timeout(self) -> int:
        return self.timeout

    def backoff(self) -> int:
        """超时未推进: 间隔乘以退避倍数, 返回新的间隔"""
        self.timeout = min(int(self.timeout * self.config.backoff_factor), self.config.max_timeout)
        return self.timeout

    def reset_timeout(self) -> None:
        """任意一次提交后回到基础间隔"""
        self.timeout = self.config.base_timeout

    # -------------------- 事件驱动副本的同步接口 --------------------

    def on_next_sync_view(self, replica: "EventDrivenReplica", view: int) -> ProtocolMsg:
        """本地超时: 把 qc_high 通过 NEW-VIEW 发给 view 的领导者, 并把超时间隔加倍"""
        qc = replica.qc_high
        node = replica.tree.get(qc.node)
        msg = ProtocolMsg(
            mtype=MsgType.NEW_VIEW,
            view=view,
            sender=replica.me,
            node=node,
            justify=qc,
            ancestors=replica.ancestors_of(node),
        )
        interval = self.backoff()
        log.debug(f"副本 {replica.me} 进入视图 {view}, 超时间隔 {interval}")
        return msg

    def on_receive_new_view(self, replica: "EventDrivenReplica", msg: ProtocolMsg) -> bool:
        """收到 NEW-VIEW: 更新 qc_high; 返回是否应由本副本在 msg.view 发起提案

        Raises:
            InvalidQC: 携带的 QC 校验失败
        """
        if msg.justify is None or not replica.verify_qc(msg.justify):
            raise InvalidQC(f"副本 {msg.sender} 的 NEW-VIEW 携带无效 QC")
        if msg.justify.node in replica.tree:
            replica.update_qc_high(msg.justify)
        self.prune(replica.view)
        if msg.view < replica.view:
            return False
        bucket = self.new_views.setdefault(msg.view, {})
        bucket[msg.sender] = msg
        return (
            self.get_leader(msg.view) == replica.me
            and len(bucket) >= self.n - self.f
            and msg.view >= replica.view
        )

    def prune(self, view: int) -> None:
        """丢弃早于 view 的 NEW-VIEW 记录"""
        for old in [v for v in self.new_views if v < view]:
            del self.new_views[old]

    def on_beat(self, replica: "EventDrivenReplica", view: int) -> bool:
        """领导者按节奏发起提案; 非领导者调用时不做任何事"""
        if self.get_leader(view) != replica.me:
            return False
        replica.on_propose(view)
        return True

    def is_stable(self, height: int) -> bool:
        """height 的领导者与上一高度相同, 可以跳过 NEW-VIEW 收集"""
        return height > 1 and self.get_leader(height) == self.get_leader(height - 1)
