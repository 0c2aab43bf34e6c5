"""独立校验器

audit 只读取 RunTrace(事件与节点登记表), 不接触任何副本内部状态;
explore 在 n=4, f=1 的小模型上穷举拜占庭提案者的所有调度.
"""

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import NamedTuple

from .BlockTree import BlockTree
from .CryptoProvider import MockCryptoProvider
from .EventDriven import plan_update, should_vote
from .model.Base import BoundTooLarge, MsgType, NegativeVariant, UpdateMode
from .model.ConfigModel import ExploreAlphabet, ExploreBound
from .model.TraceModel import (
    AuditReport,
    ExhaustiveReport,
    LivenessReport,
    NodeInfo,
    RunTrace,
    TraceEvent,
    TraceKind,
    Violation,
)
from .model.TreeModel import Node, QuorumCert
from .utils.Constants import Defaults
from .utils.Logger import log

# ==========================================================
# 轨迹审计
# ==========================================================


class TraceTree:
    """由轨迹节点登记表重建的父子关系"""

    def __init__(self, trace: RunTrace):
        self.nodes = trace.nodes

    def height(self, digest: str) -> int:
        info = self.nodes.get(digest)
        return info.height if info is not None else -1

    def extends(self, a: str, b: str) -> bool:
        """b 是否在 a 的分支上; 未登记的节点视为不相关"""
        if a == b:
            return True
        na, nb = self.nodes.get(a), self.nodes.get(b)
        if na is None or nb is None:
            return False
        while na.height > nb.height:
            na = self.nodes.get(na.parent)
            if na is None:
                return False
        return na.id == nb.id

    def conflicts(self, a: str, b: str) -> bool:
        return not (self.extends(a, b) or self.extends(b, a))


def committed_by(trace: RunTrace) -> dict[int, list[str]]:
    """每个正确副本按顺序提交的节点"""
    out: dict[int, list[str]] = {i: [] for i in trace.correct}
    for e in trace.of_kind(TraceKind.COMMIT):
        if e.replica in out and e.node is not None:
            out[e.replica].append(e.node)
    return out


def safety_violations(tree: TraceTree, commits: dict[int, list[str]]) -> list[Violation]:
    """两两比较正确副本的最高提交节点; 冲突时给出双方最早的冲突节点"""
    violations = []
    for i, j in combinations(sorted(commits), 2):
        if not commits[i] or not commits[j]:
            continue
        tip_i = max(commits[i], key=tree.height)
        tip_j = max(commits[j], key=tree.height)
        if not tree.conflicts(tip_i, tip_j):
            continue
        a = next(x for x in commits[i] if tree.conflicts(x, tip_j))
        b = next(x for x in commits[j] if tree.conflicts(x, tip_i))
        violations.append(Violation(replicas=(i, j), nodes=(a, b)))
    return violations


def _qc_index(trace: RunTrace, tree: TraceTree) -> dict[tuple[str, int], set[str]]:
    """(阶段, 视图) -> 出现过 QC 的节点; 流水线协议中节点 justify 的视图即被指向节点的高度"""
    qcs: dict[tuple[str, int], set[str]] = defaultdict(set)
    for e in trace.of_kind(TraceKind.QC):
        if e.phase is not None and e.view is not None and e.node is not None:
            qcs[(e.phase, e.view)].add(e.node)
    if trace.protocol != "basic":
        for info in trace.nodes.values():
            if info.justify is not None and info.justify in trace.nodes:
                qcs[(MsgType.GENERIC.value, tree.height(info.justify))].add(info.justify)
    return qcs


def _non_decreasing(values: list[int]) -> bool:
    return all(a <= b for a, b in zip(values, values[1:]))


def audit(trace: RunTrace) -> AuditReport:
    """对一次运行的轨迹做全局检查

    - 正确副本之间没有冲突的提交
    - 同一视图同一类型的 QC 不指向冲突节点
    - 各正确副本的执行序列两两互为前缀
    - 正确副本在每个 (阶段, 视图) 至多对一个节点投票
    - 视图, 锁, qc_high 单调不减
    - 每次加锁的节点都有对应的 QC
    """
    tree = TraceTree(trace)
    correct = set(trace.correct)
    notes: list[str] = []

    violations = safety_violations(tree, committed_by(trace))
    for v in violations:
        notes.append(f"副本 {v.replicas[0]} 提交 {v.nodes[0][:8]}, 副本 {v.replicas[1]} 提交冲突的 {v.nodes[1][:8]}")

    qcs = _qc_index(trace, tree)
    lemma_ok = True
    for (phase, view), nodes in sorted(qcs.items()):
        if any(tree.conflicts(a, b) for a, b in combinations(sorted(nodes), 2)):
            lemma_ok = False
            notes.append(f"视图 {view} 存在两个冲突的 {phase} QC")

    executed = [trace.executed.get(i, []) for i in sorted(correct)]
    prefix_ok = True
    for a, b in combinations(executed, 2):
        k = min(len(a), len(b))
        if a[:k] != b[:k]:
            prefix_ok = False
    if not prefix_ok:
        notes.append("执行序列不互为前缀")

    votes: dict[tuple[int, str | None, int | None], set[str]] = defaultdict(set)
    for e in trace.of_kind(TraceKind.VOTE):
        if e.replica in correct and e.node is not None:
            votes[(e.replica, e.phase, e.view)].add(e.node)
    unique_ok = all(len(nodes) == 1 for nodes in votes.values())
    if not unique_ok:
        notes.append("存在同一视图同一阶段对不同节点的投票")

    series: dict[tuple[int, TraceKind], list[int]] = defaultdict(list)
    for e in trace.of_kind(TraceKind.ENTER_VIEW, TraceKind.LOCK, TraceKind.QC_HIGH, TraceKind.PREPARE_QC):
        if e.replica not in correct:
            continue
        key = e.view if e.kind == TraceKind.ENTER_VIEW else e.detail.get("qc_view", e.detail.get("height"))
        if key is not None:
            series[(e.replica, e.kind)].append(key)
    monotone_ok = True
    for (replica, kind), values in sorted(series.items()):
        if not _non_decreasing(values):
            monotone_ok = False
            notes.append(f"副本 {replica} 的 {kind.value} 出现回退")

    supported = set().union(*qcs.values()) if qcs else set()
    supported.add(trace.genesis)
    lock_ok = True
    for e in trace.of_kind(TraceKind.LOCK):
        if e.replica in correct and e.node is not None and e.node not in supported:
            lock_ok = False
            notes.append(f"副本 {e.replica} 锁在没有 QC 的节点 {e.node[:8]}")

    for e in trace.of_kind(TraceKind.CONFLICT):
        if e.replica in correct:
            notes.append(f"副本 {e.replica} 拒绝了与已执行分支冲突的提交 {(e.node or '')[:8]}")

    return AuditReport(
        safety_ok=not violations,
        violations=violations,
        lemma_basic_ok=lemma_ok,
        prefix_order_ok=prefix_ok,
        per_view_vote_uniqueness_ok=unique_ok,
        monotonicity_ok=monotone_ok,
        lock_support_ok=lock_ok,
        notes=notes,
    )


def liveness_report(trace: RunTrace, hops: int = Defaults.T_F_HOPS) -> LivenessReport:
    """GST 之后第一次提交距视图同步的时间

    视图同步点取 GST 与正确副本在该次提交之前最后一次因超时(或启动)进入视图的时刻中的较大者.
    """
    bound = hops * trace.delta
    correct = set(trace.correct)
    first = next(
        (e for e in trace.of_kind(TraceKind.COMMIT) if e.replica in correct and e.at >= trace.gst),
        None,
    )
    if first is None:
        return LivenessReport(bound=bound)
    sync = trace.gst
    for e in trace.of_kind(TraceKind.ENTER_VIEW):
        if e.replica in correct and e.at <= first.at and e.detail.get("reason") in ("timeout", "start"):
            sync = max(sync, e.at)
    return LivenessReport(
        decided=True,
        first_decision_tick=first.at,
        decision_view=first.view,
        sync_tick=sync,
        latency=first.at - sync,
        bound=bound,
    )


def pipeline_latencies(trace: RunTrace) -> list[tuple[int, int]]:
    """每个已提交节点的 (提案视图, 最早提交视图), 按提案视图排序"""
    proposed = {e.node: e.view for e in trace.of_kind(TraceKind.PROPOSE) if e.node is not None and e.view is not None}
    correct = set(trace.correct)
    committed: dict[str, int] = {}
    for e in trace.of_kind(TraceKind.COMMIT):
        if e.replica not in correct or e.node is None or e.view is None:
            continue
        committed[e.node] = min(committed.get(e.node, e.view), e.view)
    return sorted((proposed[node], view) for node, view in committed.items() if node in proposed)


# 每个正确副本的状态: (vheight, 已投票高度, 锁, 已执行), 节点以模板下标表示, -1 为创世节点
ReplicaState = tuple[int, tuple[int, ...], int, int]
# (三个正确副本的状态, 每个模板节点的正确票数, 封顶为 2)
State = tuple[tuple[ReplicaState, ...], tuple[int, ...]]

HONEST = 3
BYZANTINE = 3
# 拜占庭副本总会补上一票, 再有两张正确票即构成 n−f
QC_VOTES = 2
PREFIX_DEPTH = 1
MAX_TEMPLATE_NODES = 16

# 模板节点: (标签, 前驱下标, 高度), 前驱为 None 表示直接挂在创世节点上
Slot = tuple[str, int | None, int]


class Action(NamedTuple):
    node: int
    replica: int


def chains(*branches: list[int]) -> list[Slot]:
    """每条分支的第 i 个节点以第 i-1 个为前驱"""
    out: list[Slot] = []
    for prefix, heights in zip("xy", branches):
        prev = None
        for i, h in enumerate(heights, start=1):
            out.append((f"{prefix}{i}", prev, h))
            prev = len(out) - 1
    return out


def forks(views: int) -> list[Slot]:
    """对每个节点(含创世节点)和每个更高的高度 h <= views 各生成一个以它为前驱的节点

    正确领导者总在 qc_high 上提案, 拜占庭领导者可以在任意已认证节点上提案,
    两者都落在这个集合里.
    """
    out: list[Slot] = []
    queue: list[tuple[int | None, int, str]] = [(None, 0, "n")]
    i = 0
    while i < len(queue):
        pred, height, label = queue[i]
        i += 1
        for h in range(height + 1, views + 1):
            child = f"{label}{h}" if pred is None else f"{label}-{h}"
            out.append((child, pred, h))
            queue.append((len(out) - 1, h, child))
    return out


class TemplateModel:
    """拜占庭提案者的模板: 一组带前驱的候选节点

    节点以其前驱为父(高度不连续处以空白节点补齐), 携带前驱的 QC.
    只有前驱凑齐 n−f 票后, 节点才能被发出.
    拜占庭副本可以把任意已发出的节点反复发给任意正确副本, 投票全部交给它收集.
    正确副本的投票与更新规则直接复用 should_vote / plan_update.
    """

    def __init__(self, bound: ExploreBound):
        self.bound = bound
        self.mode = bound.mode
        self.variant = bound.variant
        slots = self.layout(bound)
        if len(slots) > MAX_TEMPLATE_NODES:
            raise BoundTooLarge(f"模板节点 {len(slots)} 个, 超过 {MAX_TEMPLATE_NODES}")
        self.symmetric = bound.alphabet == ExploreAlphabet.EQUIVOCATION
        self.half = len(slots) // 2
        self.crypto = MockCryptoProvider(bound.n, bound.f)
        self.tree = BlockTree(self.crypto, padded=True)
        self.nodes: list[Node] = []
        self.labels: list[str] = []
        self.pred: list[int | None] = []
        for label, pred, h in slots:
            if pred is None:
                parent, qc = self.tree.genesis, self.tree.genesis_qc
            else:
                parent = self.nodes[pred]
                qc = self.full_qc(parent)
            self.nodes.append(self.tree.create_leaf(parent.id, label, qc, h))
            self.pred.append(pred)
            self.labels.append(f"{label}@{h}")
        self.tree.created.clear()
        self.index = {node.id: k for k, node in enumerate(self.nodes)}
        self.index[self.tree.genesis.id] = -1
        # 只有作为前驱的节点才需要计票
        self.counted = {p for p in self.pred if p is not None}
        # 节点下标 -> plan_update 给出的 (锁, 提交), 与副本状态无关
        self.plans = [self.plan(k) for k in range(len(self.nodes))]
        self._steps: dict[tuple[int, ReplicaState], tuple[ReplicaState, bool]] = {}

    @staticmethod
    def layout(bound: ExploreBound) -> list[Slot]:
        match bound.alphabet:
            case ExploreAlphabet.VHEIGHT:
                return chains([1, 2, 3, 4], [4, 5, 6, 7])
            case ExploreAlphabet.DIRECT_PARENT:
                return chains([1, 2, 5, 6], [3, 4, 6, 7])
            case ExploreAlphabet.FORKS:
                return forks(bound.views)
            case _:
                heights = list(range(1, bound.views + 1))
                return chains(heights, list(heights))

    def full_qc(self, node: Node) -> QuorumCert:
        payload = QuorumCert.encode(MsgType.GENERIC, node.height, node.id)
        parts = {self.crypto.tsign(i, payload) for i in range(self.crypto.n)}
        return QuorumCert(qtype=MsgType.GENERIC, view=node.height, node=node.id, sig=self.crypto.tcombine(payload, parts))

    def node(self, k: int) -> Node:
        return self.tree.genesis if k < 0 else self.nodes[k]

    def plan(self, k: int) -> tuple[int | None, int | None]:
        p = plan_update(self.tree, self.nodes[k], mode=self.mode, variant=self.variant)
        lock = self.index[p.lock.id] if p.lock is not None else None
        commit = self.index[p.commit.id] if p.commit is not None else None
        return lock, commit

    def conflicts(self, a: int, b: int) -> bool:
        return self.tree.conflicts(self.node(a).id, self.node(b).id)

    # -------------------- 状态 --------------------

    def initial(self) -> State:
        replica: ReplicaState = (0, (), -1, -1)
        return (replica,) * HONEST, (0,) * len(self.nodes)

    def available(self, state: State, k: int) -> bool:
        p = self.pred[k]
        return p is None or state[1][p] >= QC_VOTES

    def step_replica(self, k: int, local: ReplicaState) -> tuple[ReplicaState, bool]:
        """单个正确副本收到模板节点 k 后的新状态, 以及是否投票; 处理顺序与 EventDrivenReplica 一致"""
        key = (k, local)
        cached = self._steps.get(key)
        if cached is not None:
            return cached
        vheight, voted, lock, executed = local
        node = self.nodes[k]
        vote = should_vote(
            self.tree,
            node,
            vheight=vheight,
            b_lock=self.node(lock),
            voted_heights=voted,
            variant=self.variant,
        )
        if vote:
            if self.variant == NegativeVariant.VHEIGHT:
                voted = tuple(sorted({*voted, node.height}))
            else:
                vheight = max(vheight, node.height)
        new_lock, commit = self.plans[k]
        if new_lock is not None and self.node(new_lock).height > self.node(lock).height:
            lock = new_lock
        if commit is not None:
            target, current = self.node(commit), self.node(executed)
            # 与已执行分支冲突的提交被副本拒绝
            if target.height > current.height and self.tree.extends(target.id, current.id):
                executed = commit
        result = ((vheight, voted, lock, executed), vote)
        self._steps[key] = result
        return result

    def deliver(self, state: State, action: Action) -> State:
        """把模板节点 action.node 交给正确副本 action.replica"""
        replicas, votes = state
        k, r = action
        local, vote = self.step_replica(k, replicas[r])
        if vote and k in self.counted and votes[k] < QC_VOTES:
            votes = (*votes[:k], votes[k] + 1, *votes[k + 1 :])
        return (*replicas[:r], local, *replicas[r + 1 :]), votes

    def successors(self, state: State) -> list[tuple[Action, State]]:
        out = []
        for k in range(len(self.nodes)):
            if not self.available(state, k):
                continue
            for r in range(HONEST):
                action = Action(k, r)
                nxt = self.deliver(state, action)
                if nxt != state:
                    out.append((action, nxt))
        return out

    def violated(self, state: State) -> bool:
        tips = [r[3] for r in state[0]]
        return any(self.conflicts(a, b) for a, b in combinations(tips, 2))

    # -------------------- 重放 --------------------

    def replay(self, actions: list[Action]) -> RunTrace:
        """沿一条调度重放, 生成与仿真器同格式的轨迹, 交给 audit 检查"""
        trace = RunTrace(
            protocol="two-phase" if self.mode == UpdateMode.TWO_PHASE else "event",
            n=self.bound.n,
            f=self.bound.f,
            seed=0,
            gst=0,
            delta=1,
            byzantine=[BYZANTINE],
            genesis=self.tree.genesis.id,
            executed={r: [] for r in range(HONEST)},
        )
        self.register(trace, self.tree.genesis)
        state = self.initial()
        for at, action in enumerate(actions, start=1):
            k, r = action
            node = self.nodes[k]
            for b in self.tree.branch(node.id):
                self.register(trace, b)
            before = state[0][r]
            after, vote = self.step_replica(k, before)
            if vote:
                trace.events.append(
                    TraceEvent(at=at, replica=r, kind=TraceKind.VOTE, view=node.height, node=node.id, phase=MsgType.GENERIC.value)
                )
            if after[2] != before[2]:
                lock = self.node(after[2])
                trace.events.append(
                    TraceEvent(at=at, replica=r, kind=TraceKind.LOCK, view=node.height, node=lock.id, detail={"height": lock.height})
                )
            if after[3] != before[3]:
                floor = self.node(before[3]).height
                for b in self.tree.branch(self.node(after[3]).id):
                    if b.height <= floor or b.is_dummy:
                        continue
                    trace.events.append(TraceEvent(at=at, replica=r, kind=TraceKind.COMMIT, view=node.height, node=b.id))
                    trace.executed[r].append(b.cmd)
            nxt = self.deliver(state, action)
            if k in self.counted and state[1][k] < QC_VOTES <= nxt[1][k]:
                trace.events.append(
                    TraceEvent(
                        at=at, replica=BYZANTINE, kind=TraceKind.QC, view=node.height, node=node.id, phase=MsgType.GENERIC.value
                    )
                )
            state = nxt
        trace.final_tick = len(actions)
        return trace

    @staticmethod
    def register(trace: RunTrace, node: Node) -> None:
        if node.id in trace.nodes:
            return
        trace.nodes[node.id] = NodeInfo(
            id=node.id,
            parent=node.parent,
            height=node.height,
            cmd=node.cmd,
            justify=node.justify.node if node.justify is not None else None,
        )

    # -------------------- 规范化 --------------------

    def swap(self, k: int) -> int:
        if k < 0:
            return k
        return k + self.half if k < self.half else k - self.half

    def canonical(self, state: State) -> State:
        """正确副本可互换; 两条分支高度排布相同时 x / y 也可互换"""
        replicas, votes = state
        best = (tuple(sorted(replicas)), votes)
        if self.symmetric:
            swapped = tuple(sorted((v, h, self.swap(lock), self.swap(ex)) for v, h, lock, ex in replicas))
            swapped_votes = votes[self.half :] + votes[: self.half]
            best = min(best, (swapped, swapped_votes))
        return best

    def describe(self, action: Action) -> str:
        return f"{self.labels[action.node]}->r{action.replica}"


class _Search:
    """从一个前缀状态出发的深度优先搜索, 只访问规范化后未见过的状态

    每个终止状态沿首次到达它的调度重放成轨迹并审计; 审计不通过与冲突提交一样记为违例.
    """

    def __init__(self, model: TemplateModel, max_states: int, stop_on_violation: bool):
        self.model = model
        self.max_states = max_states
        self.stop_on_violation = stop_on_violation
        self.visited: set[State] = set()
        self.terminal: set[State] = set()
        self.violations: dict[State, list[Action]] = {}

    def check(self, key: State, state: State, path: list[Action], terminal: bool) -> bool:
        """记录违例; 返回 True 表示应停止搜索"""
        model = self.model
        if terminal:
            self.terminal.add(key)
        bad = model.violated(state)
        if not bad and terminal:
            report = audit(model.replay(path))
            if not report.ok:
                log.debug(f"终止状态审计未通过: {'; '.join(report.notes)}")
                bad = True
        if bad:
            self.violations.setdefault(key, path)
        return bad and self.stop_on_violation

    def run(self, state: State, path: list[Action]) -> None:
        model = self.model
        stack = [(state, path)]
        while stack:
            state, path = stack.pop()
            key = model.canonical(state)
            if key in self.visited:
                continue
            self.visited.add(key)
            if len(self.visited) > self.max_states:
                raise BoundTooLarge(f"状态数超过上限 {self.max_states}")
            succ = model.successors(state)
            if self.check(key, state, path, terminal=not succ):
                return
            for action, nxt in reversed(succ):
                stack.append((nxt, [*path, action]))


def explore(bound: ExploreBound) -> ExhaustiveReport:
    """穷举拜占庭提案者的所有投递顺序, 检查正确副本之间是否出现冲突提交

    终止状态额外经过 audit 的全部检查.
    先展开 PREFIX_DEPTH 层得到前缀状态, 每个前缀独立搜索(可分给多个线程),
    结果按前缀顺序合并, 与线程数无关.

    Raises:
        BoundTooLarge: 模板过大或状态数超过 max_states
    """
    model = TemplateModel(bound)
    log.info(
        f"开始穷举: 模板={bound.alphabet.value} 模式={bound.mode.value} "
        f"弱化={bound.variant.value if bound.variant else '-'} 节点={len(model.nodes)}"
    )

    seen: set[State] = set()
    head = _Search(model, bound.max_states, stop_on_violation=False)
    frontier: list[tuple[State, list[Action]]] = [(model.initial(), [])]
    for _ in range(PREFIX_DEPTH):
        nxt_frontier: list[tuple[State, list[Action]]] = []
        for state, path in frontier:
            key = model.canonical(state)
            if key in seen:
                continue
            seen.add(key)
            succ = model.successors(state)
            head.check(key, state, path, terminal=not succ)
            nxt_frontier += [(s, [*path, a]) for a, s in succ]
        frontier = nxt_frontier

    prefixes: list[tuple[State, list[Action]]] = []
    keys: set[State] = set()
    for state, path in frontier:
        key = model.canonical(state)
        if key not in seen and key not in keys:
            keys.add(key)
            prefixes.append((state, path))

    def search(prefix: tuple[State, list[Action]]) -> _Search:
        s = _Search(model, bound.max_states, bound.stop_on_violation)
        s.run(*prefix)
        return s

    if bound.workers > 1:
        with ThreadPoolExecutor(max_workers=bound.workers) as executor:
            results = list(executor.map(search, prefixes))
    else:
        results = [search(p) for p in prefixes]

    visited = set(seen)
    terminal = set(head.terminal)
    violations = dict(head.violations)
    for s in results:
        visited |= s.visited
        terminal |= s.terminal
        for key, path in s.violations.items():
            violations.setdefault(key, path)
    if len(visited) > bound.max_states:
        raise BoundTooLarge(f"状态数 {len(visited)} 超过上限 {bound.max_states}")

    schedules = [[model.describe(a) for a in path] for path in violations.values()]
    if bound.stop_on_violation:
        schedules = schedules[:1]
    log.info(f"穷举结束: 状态 {len(visited)}, 终止状态 {len(terminal)}, 违例 {len(schedules)}")
    return ExhaustiveReport(
        states=len(visited),
        terminal_states=len(terminal),
        violations=schedules,
        bound=bound.model_dump(mode="json"),
    )
