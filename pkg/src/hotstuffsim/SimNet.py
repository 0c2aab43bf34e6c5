import heapq
from itertools import count
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .BasicHotStuff import BasicReplica
from .ChainedHotStuff import ChainedReplica
from .CryptoProvider import AuthenticatorLedger, MockCryptoProvider
from .EventDriven import EventDrivenReplica
from .model.Base import ConfigError, MsgType, NotByzantine, Protocol
from .model.ConfigModel import ByzantineBehavior, ByzantineScript, Equivocation, PreGstKind, Scenario
from .model.MsgModel import Envelope, Outbox, ProtocolMsg, Record, TimerFire
from .model.TraceModel import NodeInfo, RunTrace, TraceEvent, TraceKind
from .model.TreeModel import Node
from .Pacemaker import Pacemaker
from .replicatype.BaseReplica import BaseReplica
from .utils.Logger import log


def load_scenario(path: str | Path) -> Scenario:
    """读取场景 JSON 文件

    Raises:
        ConfigError: 文件不可读或内容不合法
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"无法读取场景文件 {path}: {e}") from e
    try:
        return Scenario.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"场景文件 {path} 不合法: {e}") from e


def inject_equivocation(script: ByzantineScript, leader: int, view: int, cmds: tuple[str, str]) -> ByzantineScript:
    """让拜占庭领导者 leader 在 view 中向两半副本发送冲突提案

    Raises:
        NotByzantine: leader 不在拜占庭集合中
    """
    if leader not in script.byzantine:
        raise NotByzantine(f"副本 {leader} 不是拜占庭副本")
    behaviors = dict(script.behaviors)
    behaviors[leader] = ByzantineBehavior.EQUIVOCATE
    equivocations = [*script.equivocations, Equivocation(leader=leader, view=view, cmds=cmds)]
    return script.model_copy(update={"behaviors": behaviors, "equivocations": equivocations})


def build_replica(scenario: Scenario, me: int, crypto: MockCryptoProvider) -> BaseReplica:
    """按场景中的协议构造副本, 每个副本持有独立的 Pacemaker"""
    net = scenario.net
    pacemaker = Pacemaker(scenario.pacemaker, net.n, net.f)
    kwargs = {"suffix_depth": net.suffix_depth, "batch_size": scenario.batch_size}
    match scenario.protocol:
        case Protocol.BASIC:
            replica: BaseReplica = BasicReplica(me, net.n, net.f, crypto, pacemaker, **kwargs)
        case Protocol.CHAINED:
            replica = ChainedReplica(me, net.n, net.f, crypto, pacemaker, **kwargs)
        case _:
            replica = EventDrivenReplica(
                me,
                net.n,
                net.f,
                crypto,
                pacemaker,
                mode=scenario.update_mode,
                variant=scenario.negative_variant,
                **kwargs,
            )
    replica.max_views = scenario.max_views
    return replica


class TraceRecorder:
    """把副本输出的记录与节点登记到 RunTrace"""

    def __init__(self, trace: RunTrace):
        self.trace = trace

    def node(self, node: Node) -> None:
        if node.id in self.trace.nodes:
            return
        self.trace.nodes[node.id] = NodeInfo(
            id=node.id,
            parent=node.parent,
            height=node.height,
            cmd=node.cmd,
            justify=node.justify.node if node.justify is not None else None,
        )

    def records(self, at: int, replica: int, records: list[Record]) -> None:
        for r in records:
            self.trace.events.append(
                TraceEvent(
                    at=at,
                    replica=replica,
                    kind=TraceKind(r.kind),
                    view=r.view,
                    node=r.node,
                    phase=r.phase,
                    detail=r.detail,
                )
            )

    def event(self, at: int, replica: int, kind: TraceKind, msg: ProtocolMsg | None = None, **kwargs) -> None:
        if msg is not None:
            kwargs.setdefault("view", msg.view)
            kwargs.setdefault("phase", msg.mtype.value)
            kwargs.setdefault("node", msg.node.id if msg.node is not None else None)
            kwargs.setdefault("peer", msg.sender)
        self.trace.events.append(TraceEvent(at=at, replica=replica, kind=kind, **kwargs))

    def absorb(self, at: int, replica: int, out: Outbox) -> None:
        for node in out.nodes:
            self.node(node)
        self.records(at, replica, out.records)


class Simulator:
    """确定性离散事件仿真器: 部分同步网络 + 拜占庭脚本

    事件按 (时间, 序号) 出队; 同一种子下两次运行的轨迹完全一致.

    Example:
        ```python
        trace = Simulator(Scenario(protocol=Protocol.BASIC)).run()
        print(trace.stopped_by, len(trace.of_kind(TraceKind.COMMIT)))
        ```
    """

    def __init__(self, scenario: Scenario, *, seed: int | None = None):
        self.scenario = scenario
        self.net = scenario.net
        self.seed = self.net.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.crypto = MockCryptoProvider(self.net.n, self.net.f, seed=self.seed)
        self.replicas = [build_replica(scenario, i, self.crypto) for i in range(self.net.n)]
        self.script = scenario.byzantine
        self.byzantine = self.script.byzantine
        self.correct = [i for i in range(self.net.n) if i not in self.byzantine]
        self.ledger = AuthenticatorLedger(self.net.n)
        self.queue: list[tuple[int, int, int, ProtocolMsg | TimerFire]] = []
        self._seq = count()
        self.now = 0
        self.trace = RunTrace(
            protocol=scenario.protocol.value,
            n=self.net.n,
            f=self.net.f,
            seed=self.seed,
            gst=self.net.gst,
            delta=self.net.delta,
            byzantine=sorted(self.byzantine),
            genesis=self.replicas[0].tree.genesis.id,
        )
        self.recorder = TraceRecorder(self.trace)
        self.recorder.node(self.replicas[0].tree.genesis)

    # ==========================================================
    # 网络
    # ==========================================================

    def behavior(self, i: int) -> ByzantineBehavior | None:
        return self.script.behaviors.get(i)

    def delay(self, upper: int) -> int:
        return int(self.rng.integers(1, upper + 1))

    def delivery_time(self, src: int, dest: int) -> int | None:
        """消息送达时间; None 表示被网络丢弃

        GST 之后延迟落在 [1, Δ]; 之前由 pre_gst 策略决定, 但最迟在 GST + Δ 送达.
        """
        if src == dest:
            return self.now
        gst, delta = self.net.gst, self.net.delta
        if self.now >= gst:
            return self.now + self.delay(delta)
        policy = self.net.pre_gst
        cap = max(self.now, gst) + delta
        match policy.kind:
            case PreGstKind.DROP:
                return None
            case PreGstKind.ADVERSARY if src in policy.isolate or dest in policy.isolate:
                return gst + self.delay(delta)
            case _:
                return min(self.now + self.delay(policy.max_delay), cap)

    def push(self, at: int, dest: int, payload: ProtocolMsg | TimerFire) -> None:
        heapq.heappush(self.queue, (at, next(self._seq), dest, payload))

    def route(self, src: int, env: Envelope) -> None:
        dests = range(self.net.n) if env.dest is None else [env.dest]
        for dest in dests:
            at = self.delivery_time(src, dest)
            if at is None:
                self.recorder.event(self.now, dest, TraceKind.DROP, env.msg)
                continue
            self.push(at, dest, env.msg)

    # ==========================================================
    # 拜占庭行为
    # ==========================================================

    def equivocates(self, src: int, msg: ProtocolMsg) -> bool:
        if self.behavior(src) != ByzantineBehavior.EQUIVOCATE or msg.is_vote or msg.node is None:
            return False
        if msg.mtype not in (MsgType.PREPARE, MsgType.GENERIC):
            return False
        planned = [e for e in self.script.equivocations if e.leader == src]
        return not planned or any(e.view == msg.view for e in planned)

    def split_proposal(self, src: int, msg: ProtocolMsg) -> None:
        """向两半正确副本分别发送 msg 与一个同高度的孪生提案, 自己不接收"""
        assert msg.node is not None
        node = msg.node
        planned = next((e for e in self.script.equivocations if e.leader == src and e.view == msg.view), None)
        twin_cmd = planned.cmds[1] if planned is not None else f"{node.cmd}-twin"
        tree = self.replicas[src].tree
        twin = tree.create_leaf(node.parent, twin_cmd, node.justify, node.height)
        tree.created.clear()
        self.recorder.node(twin)
        twin_msg = msg.model_copy(update={"node": twin, "justify": msg.justify})
        others = [i for i in range(self.net.n) if i != src]
        half = (len(others) + 1) // 2
        log.debug(f"副本 {src} 在视图 {msg.view} 双重提案: {node.short} / {twin.short}")
        for i, dest in enumerate(others):
            self.route(src, Envelope(dest=dest, msg=msg if i < half else twin_msg))

    def dispatch(self, src: int, out: Outbox) -> None:
        self.recorder.absorb(self.now, src, out)
        for req in out.timers:
            self.push(self.now + req.after, src, req.fire)
        behavior = self.behavior(src)
        for env in out.sends:
            msg = env.msg
            if behavior == ByzantineBehavior.WITHHOLD_VOTES and msg.is_vote:
                views = self.script.withhold_views
                if views is None or msg.view in views:
                    continue
            if env.dest is None and self.equivocates(src, msg):
                self.split_proposal(src, msg)
                continue
            self.route(src, env)

    # ==========================================================
    # 主循环
    # ==========================================================

    def decisions(self) -> int:
        committed: set[str] = set()
        for i in self.correct:
            committed.update(self.replicas[i].committed)
        return len(committed)

    def stop_reason(self) -> str | None:
        s = self.scenario
        if s.max_views is not None and all(self.replicas[i].view > s.max_views for i in self.correct):
            return "views"
        if s.max_decisions is not None and self.decisions() >= s.max_decisions:
            return "decisions"
        return None

    def run(self) -> RunTrace:
        """执行直到停止条件: 视图数, 决议数, tick 预算或事件耗尽"""
        if self.script.transcript is not None:
            from .Transcripts import transcript_driver

            driver = transcript_driver(self.scenario, seed=self.seed)
            trace = driver.run()
            self.replicas = list(driver.replicas)
            return trace

        s = self.scenario
        log.info(f"开始仿真: {s.name} 协议={s.protocol.value} n={self.net.n} f={self.net.f} 种子={self.seed}")
        for i, replica in enumerate(self.replicas):
            if self.behavior(i) == ByzantineBehavior.SILENT:
                continue
            self.dispatch(i, replica.start())

        stopped_by = "quiescent"
        while self.queue:
            reason = self.stop_reason()
            if reason is not None:
                stopped_by = reason
                break
            at, _, dest, payload = heapq.heappop(self.queue)
            if at > s.max_ticks:
                stopped_by = "tick-budget"
                self.trace.tick_budget_exhausted = True
                break
            self.now = at
            if self.behavior(dest) == ByzantineBehavior.SILENT:
                continue
            if isinstance(payload, ProtocolMsg):
                auth = self.ledger.record(dest, payload)
                self.recorder.event(at, dest, TraceKind.DELIVER, payload, auth=auth)
            self.dispatch(dest, self.replicas[dest].step(payload))
        else:
            stopped_by = self.stop_reason() or "quiescent"

        return self.finish(stopped_by)

    def finish(self, stopped_by: str) -> RunTrace:
        trace = self.trace
        trace.stopped_by = stopped_by
        trace.final_tick = self.now
        trace.executed = {i: list(self.replicas[i].executed) for i in range(self.net.n)}
        trace.authenticators = list(self.ledger.received)
        trace.views_elapsed = max((self.replicas[i].view - 1 for i in self.correct), default=0)
        log.info(
            f"仿真结束: {stopped_by}, tick={self.now}, 视图={trace.views_elapsed}, 决议={self.decisions()}"
        )
        return trace


def run(scenario: Scenario, *, seed: int | None = None) -> RunTrace:
    return Simulator(scenario, seed=seed).run()
