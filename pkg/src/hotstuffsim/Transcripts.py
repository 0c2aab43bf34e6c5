"""脚本化的拜占庭调度

三个脚本都由一个拜占庭副本 D 配合网络调度执行, 副本本身是真实的 EventDrivenReplica:

- vheight: 投票只要求"每个高度一次"而不要求单调时, 两条分支交错投票导致冲突提交
- direct-parent: 提交只要求祖先链而不要求直接父子时, 跨越空白节点的链导致冲突提交
- liveless-two-phase: 两阶段规则下, 每一轮都恰好有一个副本锁在最新的 QC 上而其他副本错过它,
  领导者永远凑不齐投票, 没有任何提交
"""

from collections import deque

from pydantic import BaseModel, ConfigDict

from .CryptoProvider import AuthenticatorLedger, MockCryptoProvider
from .EventDriven import EventDrivenReplica
from .model.Base import ConfigError, MsgType, Protocol, ScenarioDiverged, UpdateMode
from .model.ConfigModel import ByzantineBehavior, ByzantineScript, NetConfig, PacemakerKind, Scenario
from .model.MsgModel import Envelope, ProtocolMsg, TimerFire
from .model.TraceModel import RunTrace, TraceKind
from .model.TreeModel import Node, QuorumCert
from .SimNet import TraceRecorder, build_replica
from .utils.Constants import Defaults
from .utils.Logger import log


class Step(BaseModel):
    """拜占庭提案者发出的一个节点

    Attributes:
        label: 节点标签, 同时作为命令
        parent: 父节点标签, None 为创世节点(高度不连续时用空白节点补齐)
        height: 节点高度
        justify: 所携带 QC 指向的节点标签, None 为创世 QC
        to: 接收该提案的正确副本(按正确副本的顺序编号 0, 1, 2)
    """

    model_config = ConfigDict(frozen=True)

    label: str
    parent: str | None
    height: int
    justify: str | None
    to: tuple[int, ...] = (0, 1, 2)


VHEIGHT_SCHEDULE: tuple[Step, ...] = (
    Step(label="b", parent=None, height=4, justify=None, to=(0, 1)),
    Step(label="w", parent=None, height=1, justify=None),
    Step(label="w'", parent="w", height=2, justify="w"),
    Step(label="w''", parent="w'", height=3, justify="w'"),
    Step(label="w*", parent="w''", height=4, justify="w''", to=(0, 2)),
    Step(label="b'", parent="b", height=5, justify="b", to=(0, 1)),
    Step(label="b''", parent="b'", height=6, justify="b'", to=(0, 1)),
    Step(label="b*", parent="b''", height=7, justify="b''", to=(0, 1)),
)

DIRECT_PARENT_SCHEDULE: tuple[Step, ...] = (
    Step(label="w", parent=None, height=1, justify=None),
    Step(label="w'", parent="w", height=2, justify="w"),
    Step(label="b", parent=None, height=3, justify=None),
    Step(label="b'", parent="b", height=4, justify="b"),
    Step(label="w''", parent="w'", height=5, justify="w'"),
    Step(label="w*", parent="w''", height=6, justify="w''", to=(2,)),
    Step(label="b''", parent="b'", height=6, justify="b'", to=(0, 1)),
    Step(label="b*", parent="b''", height=7, justify="b''"),
)


def transcript_scenario(
    name: str, *, protocol: Protocol = Protocol.EVENT, views: int = Defaults.LIVELESS_VIEWS, **kwargs
) -> Scenario:
    """构造执行指定脚本的场景, 副本 3 为拜占庭副本"""
    return Scenario(
        name=name,
        protocol=protocol,
        byzantine=ByzantineScript(behaviors={3: ByzantineBehavior.TRANSCRIPT}, transcript=name),
        max_views=views,
        **kwargs,
    )


class TranscriptDriver:
    """手动驱动真实副本: 逐条投递消息, 截获所有输出, 由脚本决定投递给谁"""

    def __init__(self, scenario: Scenario, seed: int | None = None):
        net = scenario.net
        if (net.n, net.f) != (4, 1):
            raise ConfigError("脚本化调度只支持 n=4, f=1")
        if scenario.protocol not in (Protocol.EVENT, Protocol.TWO_PHASE):
            raise ConfigError(f"脚本化调度需要事件驱动副本, 而不是 {scenario.protocol.value}")
        byz = sorted(scenario.byzantine.byzantine)
        if len(byz) != 1:
            raise ConfigError("脚本化调度需要恰好一个拜占庭副本")
        self.scenario = scenario
        self.seed = net.seed if seed is None else seed
        self.crypto = MockCryptoProvider(net.n, net.f, seed=self.seed)
        self.replicas: list[EventDrivenReplica] = []
        for i in range(net.n):
            replica = build_replica(scenario, i, self.crypto)
            assert isinstance(replica, EventDrivenReplica)
            self.replicas.append(replica)
        self.byz = byz[0]
        self.honest = [i for i in range(net.n) if i != self.byz]
        self.D = self.replicas[self.byz]
        self.ledger = AuthenticatorLedger(net.n)
        self.tick = 0
        self.trace = RunTrace(
            protocol=scenario.protocol.value,
            n=net.n,
            f=net.f,
            seed=self.seed,
            gst=net.gst,
            delta=net.delta,
            byzantine=byz,
            genesis=self.D.tree.genesis.id,
        )
        self.recorder = TraceRecorder(self.trace)
        self.recorder.node(self.D.tree.genesis)

    # -------------------- 基本动作 --------------------

    def step(self, dest: int, event: ProtocolMsg | TimerFire) -> list[Envelope]:
        if isinstance(event, ProtocolMsg):
            self.tick += 1
            auth = self.ledger.record(dest, event)
            self.recorder.event(self.tick, dest, TraceKind.DELIVER, event, auth=auth)
        out = self.replicas[dest].step(event)
        self.recorder.absorb(self.tick, dest, out)
        return out.sends

    def timeout(self, r: int) -> list[Envelope]:
        self.tick += self.scenario.pacemaker.base_timeout
        return self.step(r, TimerFire(view=self.replicas[r].view))

    def proposal(self, node: Node) -> ProtocolMsg:
        tree = self.D.tree
        ancestors = tree.suffix(node.id, tree.genesis.id, node.height)
        for b in (*ancestors, node):
            self.recorder.node(b)
        return ProtocolMsg(
            mtype=MsgType.GENERIC,
            view=node.height,
            sender=self.byz,
            node=node,
            ancestors=ancestors,
        )

    def form_qc(self, node: Node, votes: list[ProtocolMsg]) -> QuorumCert | None:
        """用正确副本的投票加上 D 的签名合成 QC; 不足 n−f 时返回 None"""
        payload = QuorumCert.encode(MsgType.GENERIC, node.height, node.id)
        parts = {v.partial_sig for v in votes if v.partial_sig is not None and v.node is not None and v.node.id == node.id}
        parts.add(self.crypto.tsign(self.byz, payload))
        if len({p.signer for p in parts}) < self.D.quorum:
            return None
        return QuorumCert(qtype=MsgType.GENERIC, view=node.height, node=node.id, sig=self.crypto.tcombine(payload, parts))

    def run(self) -> RunTrace:
        raise NotImplementedError

    def finish(self, stopped_by: str) -> RunTrace:
        trace = self.trace
        trace.stopped_by = stopped_by
        trace.final_tick = self.tick
        trace.executed = {i: list(r.executed) for i, r in enumerate(self.replicas)}
        trace.authenticators = list(self.ledger.received)
        trace.views_elapsed = max(self.replicas[i].view - 1 for i in self.honest)
        return trace


# ==========================================================
# 弱化规则的反例脚本
# ==========================================================


class RemarkDriver(TranscriptDriver):
    """按脚本依次发出提案, 收集投票并在需要时合成 QC

    某个后续节点需要的 QC 凑不齐票时, 调度在该处阻塞(blocked_at).
    在弱化规则下脚本必须完整执行, 否则抛出 ScenarioDiverged.
    """

    def __init__(self, schedule: tuple[Step, ...], scenario: Scenario, seed: int | None = None):
        super().__init__(scenario, seed)
        self.schedule = schedule

    def run(self) -> RunTrace:
        tree = self.D.tree
        needed = {s.justify for s in self.schedule if s.justify is not None}
        nodes: dict[str, Node] = {}
        qcs: dict[str, QuorumCert] = {}

        for s in self.schedule:
            parent = nodes[s.parent].id if s.parent is not None else tree.genesis.id
            qc = qcs[s.justify] if s.justify is not None else tree.genesis_qc
            node = tree.create_leaf(parent, s.label, qc, s.height)
            tree.created.clear()
            nodes[s.label] = node
            msg = self.proposal(node)
            votes: list[ProtocolMsg] = []
            for k in s.to:
                votes += [env.msg for env in self.step(self.honest[k], msg) if env.msg.is_vote]
            if s.label not in needed:
                continue
            formed = self.form_qc(node, votes)
            if formed is None:
                log.info(f"脚本在 {s.label} 处阻塞: 只有 {len(votes)} 个正确副本投票")
                self.trace.blocked_at = s.label
                if self.scenario.negative_variant is not None:
                    raise ScenarioDiverged(f"弱化规则下 {s.label} 应当形成 QC", {"label": s.label})
                return self.finish("blocked")
            qcs[s.label] = formed
        return self.finish("transcript-end")


# ==========================================================
# 两阶段的无活性脚本
# ==========================================================


class LivelessDriver(TranscriptDriver):
    """每轮使用两个高度 h, h+1:

    1. leader(h) 收集除 iso 以外的 NEW-VIEW, 在已知最高 QC 上提案 b_h, 投递给所有正确副本
    2. iso 锁在更新的节点上拒绝投票, 其余两个正确副本投票, D 扣留投票
    3. 除 iso_next 外的正确副本超时; D 随后补投, leader(h+1) 合成 QC(b_h)
    4. 以 QC(b_h) 为 justify 的提案只投递给 iso_next, 它锁在 b_h 上, 其他副本永远收不到

    iso_next 取 leader(h+1)(若正确), 否则取既不是 leader(h+2) 也不是 iso 的正确副本.
    """

    def __init__(self, scenario: Scenario, seed: int | None = None):
        super().__init__(scenario, seed)
        pm = scenario.pacemaker
        if pm.kind != PacemakerKind.ROUND_ROBIN or pm.rotation_interval != 1 or self.byz != scenario.net.n - 1:
            raise ConfigError("无活性脚本需要逐视图轮换的领导者, 且拜占庭副本为 n-1")
        self.mode = scenario.update_mode
        self.views = max(scenario.max_views or Defaults.LIVELESS_VIEWS, 2)
        self.new_views: list[ProtocolMsg] = []
        self.diverged = False

    def leader(self, h: int) -> int:
        return self.D.pacemaker.get_leader(h)

    def keep_new_views(self, sends: list[Envelope]) -> list[ProtocolMsg]:
        """登记 NEW-VIEW, 返回其余消息"""
        rest = []
        for env in sends:
            if env.msg.mtype == MsgType.NEW_VIEW:
                self.new_views.append(env.msg)
            else:
                rest.append(env.msg)
        return rest

    def byz_new_view(self, view: int) -> ProtocolMsg:
        tree = self.D.tree
        return ProtocolMsg(mtype=MsgType.NEW_VIEW, view=view, sender=self.byz, node=tree.genesis, justify=tree.genesis_qc)

    def locked_on(self, node: Node) -> list[int]:
        return [i for i in self.honest if self.replicas[i].b_lock.id == node.id]

    def diverge(self, reason: str, **detail) -> None:
        if self.mode == UpdateMode.TWO_PHASE:
            raise ScenarioDiverged(reason, detail)
        log.info(f"调度偏离脚本({reason}), 之后按同步网络正常投递")
        self.diverged = True

    # -------------------- 初始轮 --------------------

    def setup(self) -> int:
        """leader(1) 的提案获得 QC, 但只有 leader(2) 知道并锁在其上; 返回 iso"""
        proposals: list[ProtocolMsg] = []
        for r in self.honest:
            out = self.replicas[r].start()
            self.recorder.absorb(self.tick, r, out)
            proposals += [env.msg for env in out.sends if env.msg.mtype == MsgType.GENERIC and not env.msg.is_vote]
        if not proposals:
            raise ScenarioDiverged("leader(1) 没有发出初始提案")
        b1 = proposals[0]
        collector = self.leader(2)
        votes = []
        for r in self.honest:
            votes += [env.msg for env in self.step(r, b1) if env.msg.is_vote]
        self.D.ingest(b1)
        out: list[ProtocolMsg] = []
        for v in votes:
            out += [env.msg for env in self.step(collector, v)]
        b2 = [m for m in out if m.mtype == MsgType.GENERIC and not m.is_vote]
        if not b2:
            raise ScenarioDiverged("leader(2) 没有在 QC(b1) 上提案")
        self.step(collector, b2[0])
        # 其余副本从视图 2 超时, 所有正确副本再从视图 3 超时进入视图 4
        for r in self.honest:
            if r != collector:
                self.keep_new_views(self.timeout(r))
        for r in self.honest:
            self.keep_new_views(self.timeout(r))
        return collector

    # -------------------- 一轮 --------------------

    def round(self, h: int, iso: int) -> int | None:
        """执行高度 h, h+1 的一轮, 返回下一轮的 iso; 脚本失效时返回 None"""
        proposer, collector = self.leader(h), self.leader(h + 1)
        if proposer in (self.byz, iso):
            raise ScenarioDiverged(f"高度 {h} 的提案者 {proposer} 不满足脚本前提")
        if collector != self.byz:
            iso_next = collector
        else:
            iso_next = next(r for r in self.honest if r not in (self.leader(h + 2), iso))

        # 1. NEW-VIEW, iso 的被扣留
        batch = [m for m in self.new_views if m.view == h and m.sender != iso]
        self.new_views = [m for m in self.new_views if m.view > h]
        batch.append(self.byz_new_view(h))
        sent: list[ProtocolMsg] = []
        for m in batch:
            sent += self.keep_new_views(self.step(proposer, m))
        props = [m for m in sent if m.mtype == MsgType.GENERIC and not m.is_vote]
        if not props:
            raise ScenarioDiverged(f"leader({h}) 没有收齐 NEW-VIEW 发起提案", {"height": h})
        b_h = props[0]
        assert b_h.node is not None
        self.D.ingest(b_h)

        # 2. 提案投递给所有正确副本
        votes: list[ProtocolMsg] = []
        for r in self.honest:
            votes += [m for m in self.keep_new_views(self.step(r, b_h)) if m.is_vote]
        voters = sorted(v.sender for v in votes)
        if iso in voters:
            self.diverge("iso 投票, QC 按时形成", height=h, voters=voters)
            self.release(votes + [m for m in sent if m is not b_h])
            return None
        if len(voters) != 2:
            raise ScenarioDiverged(f"高度 {h} 应恰有两个正确副本投票, 实际 {voters}")

        # 3. 除 iso_next 外超时, D 补投
        if collector != self.byz:
            for v in votes:
                self.keep_new_views(self.step(collector, v))
        for r in self.honest:
            if r != iso_next:
                self.keep_new_views(self.timeout(r))
        late = self.D.make_vote(MsgType.GENERIC, h, b_h.node)
        self.D.drain()

        # 4. 以迟到的 QC 为 justify 的提案只投递给 iso_next
        if collector != self.byz:
            out = self.keep_new_views(self.step(collector, late))
            fresh = [m for m in out if m.mtype == MsgType.GENERIC and not m.is_vote]
            if not fresh:
                raise ScenarioDiverged(f"leader({h + 1}) 没有在迟到的 QC 上提案")
            nxt = fresh[0]
        else:
            qc = self.form_qc(b_h.node, votes)
            if qc is None:
                raise ScenarioDiverged(f"高度 {h} 的 QC 未能形成")
            leaf = self.D.tree.create_leaf(b_h.node.id, f"byz-{h + 1}", qc, h + 1)
            self.D.tree.created.clear()
            nxt = self.proposal(leaf)
        self.keep_new_views(self.step(iso_next, nxt))

        locked = self.locked_on(b_h.node)
        if self.mode == UpdateMode.TWO_PHASE and locked != [iso_next]:
            raise ScenarioDiverged(f"高度 {h} 应只有 {iso_next} 锁在新 QC 上, 实际 {locked}")
        log.debug(f"高度 {h}: 副本 {iso_next} 锁在 {b_h.node.short}")
        return iso_next

    def release(self, pending: list[ProtocolMsg]) -> None:
        """脚本失效后的同步投递: 所有消息按先进先出送达, D 按正确副本运行"""
        queue: deque[tuple[int, ProtocolMsg]] = deque()

        def route(msgs: list[Envelope] | list[ProtocolMsg]) -> None:
            for item in msgs:
                if isinstance(item, Envelope):
                    env = item
                else:
                    env = Envelope(dest=self.leader(item.view + 1) if item.is_vote else None, msg=item)
                dests = range(len(self.replicas)) if env.dest is None else [env.dest]
                queue.extend((d, env.msg) for d in dests)

        route(pending)
        while queue and min(r.view for r in self.replicas) <= self.views:
            dest, msg = queue.popleft()
            if msg.mtype == MsgType.NEW_VIEW:
                continue
            route(self.step(dest, msg))

    def run(self) -> RunTrace:
        log.info(f"开始无活性脚本: 模式={self.mode.value} 视图预算={self.views}")
        iso: int | None = self.setup()
        h = 4
        # 每轮占用 h, h+1 两个高度
        while iso is not None and h + 1 <= self.views:
            iso = self.round(h, iso)
            h += 2
        return self.finish("views")


def run_liveless_two_phase(views: int = Defaults.LIVELESS_VIEWS, seed: int = 0, net: NetConfig | None = None) -> RunTrace:
    """两阶段变体的无活性脚本: 预期在 views 个视图内没有任何提交"""
    scenario = transcript_scenario(
        "liveless-two-phase",
        protocol=Protocol.TWO_PHASE,
        views=views,
        net=net or NetConfig(),
    )
    return LivelessDriver(scenario, seed).run()


def transcript_driver(scenario: Scenario, seed: int | None = None) -> TranscriptDriver:
    """按场景中的脚本名构造驱动器

    Raises:
        ConfigError: 脚本名未知, 或场景不满足脚本的前提
    """
    match scenario.byzantine.transcript:
        case "liveless-two-phase":
            return LivelessDriver(scenario, seed)
        case "vheight":
            return RemarkDriver(VHEIGHT_SCHEDULE, scenario, seed)
        case "direct-parent":
            return RemarkDriver(DIRECT_PARENT_SCHEDULE, scenario, seed)
        case other:
            raise ConfigError(f"未知脚本: {other}")


def run_transcript(scenario: Scenario, seed: int | None = None) -> RunTrace:
    return transcript_driver(scenario, seed).run()
