from ..BlockTree import BlockTree
from ..CryptoProvider import MockCryptoProvider
from ..model.Base import ConflictingCommit, HotStuffError, InvalidPartialSig, MsgType, OrphanParent
from ..model.CryptoModel import PartialSig
from ..model.MsgModel import Envelope, Outbox, ProtocolMsg, Record, TimerFire, TimerKind, TimerRequest
from ..model.TraceModel import TraceKind
from ..model.TreeModel import Node, QuorumCert
from ..Pacemaker import Pacemaker
from ..utils.Logger import log


class BaseReplica:
    """所有协议副本的基类

    副本是纯状态机: 仿真器调用 start / step, 副本只通过返回的 Outbox
    发送消息, 申请定时器, 产生轨迹记录, 自身不持有时钟与线程.
    """

    protocol: str = "base"
    padded: bool = True

    def __init__(
        self,
        me: int,
        n: int,
        f: int,
        crypto: MockCryptoProvider,
        pacemaker: Pacemaker,
        *,
        suffix_depth: int = 8,
        batch_size: int = 1,
    ):
        self.me = me
        self.n = n
        self.f = f
        self.quorum = n - f
        self.crypto = crypto
        self.pacemaker = pacemaker
        self.suffix_depth = suffix_depth
        self.batch_size = batch_size
        self.tree = BlockTree(crypto, padded=self.padded)
        self.view = 1
        self.b_exec: Node = self.tree.genesis
        self.executed: list[str] = []
        self.committed: list[str] = []
        self.conflicts: list[ConflictingCommit] = []
        # (qtype, view, node) -> {签名者: 部分签名}
        self.votes: dict[tuple[MsgType, int, str], dict[int, PartialSig]] = {}
        self.formed: set[tuple[MsgType, int, str]] = set()
        # 领导者不在超过 max_views 的视图发起提案
        self.max_views: int | None = None
        self._out = Outbox()
        self._cmd_seq = 0

    # ==========================================================
    # 输出
    # ==========================================================

    def send(self, dest: int, msg: ProtocolMsg) -> None:
        self._out.sends.append(Envelope(dest=dest, msg=msg))

    def broadcast(self, msg: ProtocolMsg) -> None:
        self._out.sends.append(Envelope(dest=None, msg=msg))

    def set_timer(self, view: int, after: int, kind: TimerKind = TimerKind.VIEW) -> None:
        self._out.timers.append(TimerRequest(fire=TimerFire(kind=kind, view=view), after=after))

    def record(
        self,
        kind: TraceKind,
        *,
        view: int | None = None,
        node: str | None = None,
        phase: str | None = None,
        **detail,
    ) -> None:
        self._out.records.append(Record(kind=kind.value, view=view, node=node, phase=phase, detail=detail))

    def drain(self) -> Outbox:
        out = self._out
        out.nodes.extend(self.tree.created)
        self.tree.created.clear()
        self._out = Outbox()
        return out

    # ==========================================================
    # 仿真器入口
    # ==========================================================

    def start(self) -> Outbox:
        self.on_start()
        return self.drain()

    def step(self, event: ProtocolMsg | TimerFire) -> Outbox:
        """处理一个事件; 冲突提交会以 CONFLICT 记录上报, 同时保留已产生的输出"""
        try:
            if isinstance(event, TimerFire):
                self.on_timer(event)
            else:
                self.on_message(event)
        except ConflictingCommit as e:
            self.conflicts.append(e)
            self.record(TraceKind.CONFLICT, view=self.view, node=e.detail.get("node"), executed=e.detail.get("executed"))
            log.warning(f"副本 {self.me} 检测到冲突提交: {e}")
        except HotStuffError as e:
            log.debug(f"副本 {self.me} 丢弃事件: {e}")
        return self.drain()

    def on_start(self) -> None:
        raise NotImplementedError

    def on_message(self, msg: ProtocolMsg) -> None:
        raise NotImplementedError

    def on_timer(self, fire: TimerFire) -> None:
        raise NotImplementedError

    # ==========================================================
    # 公共工具
    # ==========================================================

    def leader(self, view: int) -> int:
        return self.pacemaker.get_leader(view)

    def may_propose(self, view: int) -> bool:
        return self.max_views is None or view <= self.max_views

    def next_command(self, view: int) -> str:
        """生成一批客户端命令(按 batch_size 打包)"""
        cmds = []
        for _ in range(self.batch_size):
            cmds.append(f"tx-{self.me}-{view}-{self._cmd_seq}")
            self._cmd_seq += 1
        return ";".join(cmds)

    def ingest(self, msg: ProtocolMsg) -> bool:
        """把消息携带的分支后缀与节点插入本地树; 祖先缺失时返回 False"""
        try:
            if msg.ancestors:
                self.tree.insert_branch(msg.ancestors)
            if msg.node is not None:
                self.tree.insert(msg.node)
            return True
        except OrphanParent as e:
            log.debug(f"副本 {self.me} 缺少祖先, 丢弃消息: {e}")
            return False

    def ancestors_of(self, node: Node) -> tuple[Node, ...]:
        return self.tree.suffix(node.id, self.b_exec.id, self.suffix_depth)

    def verify_qc(self, qc: QuorumCert | None) -> bool:
        if qc is None:
            return False
        if qc == self.tree.genesis_qc:
            return True
        return self.crypto.tverify(qc.payload, qc.sig)

    def make_vote(self, mtype: MsgType, view: int, node: Node) -> ProtocolMsg:
        """对 ⟨mtype, view, node⟩ 签名得到投票消息"""
        sig = self.crypto.tsign(self.me, QuorumCert.encode(mtype, view, node.id))
        self.record(TraceKind.VOTE, view=view, node=node.id, phase=mtype.value, height=node.height)
        return ProtocolMsg(
            mtype=mtype,
            view=view,
            sender=self.me,
            node=node,
            partial_sig=sig,
            ancestors=self.ancestors_of(node),
        )

    def collect_vote(self, msg: ProtocolMsg) -> QuorumCert | None:
        """累计投票, 首次达到 n−f 个不同签名者时合成 QC

        Raises:
            InvalidPartialSig: 部分签名校验失败
        """
        assert msg.node is not None and msg.partial_sig is not None
        key = (msg.mtype, msg.view, msg.node.id)
        payload = QuorumCert.encode(*key)
        if not self.crypto.verify_part(self.crypto.hash(payload), msg.partial_sig) or msg.partial_sig.signer != msg.sender:
            raise InvalidPartialSig(f"来自副本 {msg.sender} 的部分签名无效")
        bucket = self.votes.setdefault(key, {})
        bucket.setdefault(msg.sender, msg.partial_sig)
        if key in self.formed or len(bucket) < self.quorum:
            return None
        self.formed.add(key)
        qc = QuorumCert(qtype=msg.mtype, view=msg.view, node=msg.node.id, sig=self.crypto.tcombine(payload, bucket.values()))
        self.record(TraceKind.QC, view=msg.view, node=msg.node.id, phase=msg.mtype.value, height=msg.node.height)
        return qc

    # ==========================================================
    # 执行
    # ==========================================================

    def on_commit(self, b: Node, at_view: int | None = None) -> list[str]:
        """提交 b: 先执行尚未执行的祖先, 再执行 b; 空白节点跳过

        Raises:
            ConflictingCommit: b 与已执行分支冲突
        """
        if b.height <= self.b_exec.height:
            if self.tree.extends(self.b_exec.id, b.id):
                return []
            raise ConflictingCommit(
                f"副本 {self.me} 提交 {b.short} 与已执行的 {self.b_exec.short} 冲突",
                {"node": b.id, "executed": self.b_exec.id},
            )
        if not self.tree.extends(b.id, self.b_exec.id):
            raise ConflictingCommit(
                f"副本 {self.me} 提交 {b.short} 与已执行的 {self.b_exec.short} 冲突",
                {"node": b.id, "executed": self.b_exec.id},
            )
        pending: list[Node] = []
        node = b
        while node.id != self.b_exec.id:
            pending.append(node)
            node = self.tree.get(node.parent)
        cmds: list[str] = []
        for node in reversed(pending):
            self.b_exec = node
            if node.is_dummy:
                continue
            self.committed.append(node.id)
            for cmd in node.cmd.split(";") if node.cmd else []:
                self.executed.append(cmd)
                cmds.append(cmd)
            self.record(TraceKind.COMMIT, view=at_view if at_view is not None else self.view, node=node.id, height=node.height, cmd=node.cmd)
        self.pacemaker.reset_timeout()
        return cmds
