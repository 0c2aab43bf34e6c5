from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

SCHEMA_VERSION = "1.0"


class TraceKind(str, Enum):
    SEND = "SEND"
    DELIVER = "DELIVER"
    DROP = "DROP"
    TIMEOUT = "TIMEOUT"
    ENTER_VIEW = "ENTER_VIEW"
    PROPOSE = "PROPOSE"
    VOTE = "VOTE"
    QC = "QC"
    LOCK = "LOCK"
    QC_HIGH = "QC_HIGH"
    PREPARE_QC = "PREPARE_QC"
    COMMIT = "COMMIT"
    CONFLICT = "CONFLICT"


class TraceEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    at: int
    replica: int
    kind: TraceKind
    view: int | None = None
    node: str | None = None
    phase: str | None = None
    peer: int | None = None
    auth: int = 0
    detail: dict[str, Any] = Field(default_factory=dict)


class NodeInfo(BaseModel):
    """轨迹中出现过的节点, 供校验器独立重建父子关系"""

    model_config = ConfigDict(frozen=True)

    id: str
    parent: str
    height: int
    cmd: str = ""
    justify: str | None = None


class RunTrace(BaseModel):
    """一次运行的完整轨迹"""

    protocol: str
    n: int
    f: int
    seed: int
    gst: int
    delta: int
    byzantine: list[int] = Field(default_factory=list)
    events: list[TraceEvent] = Field(default_factory=list)
    nodes: dict[str, NodeInfo] = Field(default_factory=dict)
    genesis: str = ""
    executed: dict[int, list[str]] = Field(default_factory=dict)
    authenticators: list[int] = Field(default_factory=list)
    stopped_by: str = "quiescent"
    # 脚本化运行中无法形成所需 QC 的节点标签
    blocked_at: str | None = None
    tick_budget_exhausted: bool = False
    final_tick: int = 0
    views_elapsed: int = 0

    @property
    def correct(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.byzantine]

    def of_kind(self, *kinds: TraceKind) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]


class Violation(BaseModel):
    replicas: tuple[int, int]
    nodes: tuple[str, str]
    reason: str = "conflicting commits"


class AuditReport(BaseModel):
    safety_ok: bool = True
    violations: list[Violation] = Field(default_factory=list)
    lemma_basic_ok: bool = True
    prefix_order_ok: bool = True
    per_view_vote_uniqueness_ok: bool = True
    monotonicity_ok: bool = True
    lock_support_ok: bool = True
    notes: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_consistency(self) -> "AuditReport":
        if self.safety_ok == bool(self.violations):
            raise ValueError("violations 非空当且仅当 safety_ok 为 False")
        return self

    @property
    def ok(self) -> bool:
        return (
            self.safety_ok
            and self.lemma_basic_ok
            and self.prefix_order_ok
            and self.per_view_vote_uniqueness_ok
            and self.monotonicity_ok
            and self.lock_support_ok
        )


class ExhaustiveReport(BaseModel):
    states: int = 0
    terminal_states: int = 0
    violations: list[list[str]] = Field(default_factory=list)
    bound: dict[str, Any] = Field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations


class LivenessReport(BaseModel):
    decided: bool = False
    first_decision_tick: int | None = None
    decision_view: int | None = None
    sync_tick: int | None = None
    latency: int | None = None
    bound: int = 0

    @property
    def within_bound(self) -> bool:
        return self.latency is not None and self.latency <= self.bound


class LinearityFit(BaseModel):
    ns: list[int]
    totals: list[float]
    slope: float
    intercept: float
    max_residual_ratio: float
    tolerance: float = 0.10

    @property
    def linear(self) -> bool:
        return self.max_residual_ratio <= self.tolerance


class ViewChangeExtras(BaseModel):
    view_changes: int = 0
    total: int = 0

    @property
    def per_view_change(self) -> float:
        return self.total / self.view_changes if self.view_changes else 0.0


class Metrics(BaseModel):
    schema_version: str = SCHEMA_VERSION
    protocol: str
    scenario: str
    seed: int
    n: int
    f: int
    per_replica_authenticators_received: list[int]
    total_authenticators_per_view: dict[int, int]
    extra_viewchange_authenticators: int
    decisions: int
    views_elapsed: int
    commit_latency_views: dict[int, int]
    stopped_by: str
    final_tick: int
    audit_ok: bool
    safety_ok: bool
    violations: list[Violation] = Field(default_factory=list)


class RunResult(BaseModel):
    """批量运行中一次运行的全部产物"""

    label: str = ""
    scenario: str
    trace: RunTrace
    audit: AuditReport
    metrics: Metrics
    # 第一个正确副本的节点树(DOT), 仅在需要时生成
    tree_dot: str = ""
