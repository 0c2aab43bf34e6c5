from enum import Enum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .Base import ConfigError, NegativeVariant, Protocol, UpdateMode


class PacemakerKind(str, Enum):
    ROUND_ROBIN = "ROUND_ROBIN"
    CHAOS = "CHAOS"


class BeatPolicy(str, Enum):
    ON_QC = "ON_QC"
    FIXED_INTERVAL = "FIXED_INTERVAL"


class PacemakerConfig(BaseModel):
    """Pacemaker 配置

    Attributes:
        kind: 领导者选举方式, 轮转或带种子的伪随机
        seed: CHAOS 使用的种子
        base_timeout: 基础超时(虚拟 tick)
        backoff_factor: 超时退避倍数
        beat_policy: 提案节奏
        beat_interval: FIXED_INTERVAL 下的提案间隔
        rotation_interval: 每位领导者连续负责的高度数, 1 表示每个视图轮换
    """

    model_config = ConfigDict(extra="ignore")

    kind: PacemakerKind = PacemakerKind.ROUND_ROBIN
    seed: int = 0
    base_timeout: int = Field(default=40, gt=0)
    backoff_factor: float = Field(default=2.0, ge=1.0)
    max_timeout: int = Field(default=1_000_000, gt=0)
    beat_policy: BeatPolicy = BeatPolicy.ON_QC
    beat_interval: int = Field(default=20, gt=0)
    rotation_interval: int = Field(default=1, ge=1)


class PreGstKind(str, Enum):
    DROP = "DROP"
    DELAY = "DELAY"
    ADVERSARY = "ADVERSARY"


class PreGstPolicy(BaseModel):
    """GST 之前的网络调度策略

    DROP 丢弃 GST 前发出的消息; DELAY 在 [1, max_delay] 内随机延迟;
    ADVERSARY 在 [1, max_delay] 内随机延迟并把 isolate 中副本的收发扣留到 GST.
    """

    model_config = ConfigDict(extra="ignore")

    kind: PreGstKind = PreGstKind.DELAY
    max_delay: int = Field(default=50, ge=1)
    isolate: list[int] = Field(default_factory=list)


class NetConfig(BaseModel):
    model_config = ConfigDict(extra="ignore")

    n: int = Field(default=4, ge=1)
    f: int = Field(default=1, ge=0)
    delta: int = Field(default=10, ge=1)
    gst: int = Field(default=0, ge=0)
    seed: int = 0
    pre_gst: PreGstPolicy = Field(default_factory=PreGstPolicy)
    suffix_depth: int = Field(default=8, ge=1)

    @model_validator(mode="after")
    def check_resilience(self) -> "NetConfig":
        if self.n < 3 * self.f + 1:
            raise ConfigError(f"副本数 n={self.n} 不足以容忍 f={self.f} 个拜占庭副本 (需要 n >= 3f+1)")
        return self

    @property
    def quorum(self) -> int:
        return self.n - self.f


class ByzantineBehavior(str, Enum):
    SILENT = "SILENT"
    EQUIVOCATE = "EQUIVOCATE"
    WITHHOLD_VOTES = "WITHHOLD_VOTES"
    TRANSCRIPT = "TRANSCRIPT"


class Equivocation(BaseModel):
    """在 view 中由 leader 向两半副本分别发送冲突提案"""

    model_config = ConfigDict(frozen=True)

    leader: int
    view: int
    cmds: tuple[str, str] = ("equivocate-a", "equivocate-b")


TranscriptName = Literal["liveless-two-phase", "vheight", "direct-parent"]


class ByzantineScript(BaseModel):
    """拜占庭副本脚本

    Attributes:
        behaviors: 副本编号 -> 行为
        withhold_views: WITHHOLD_VOTES 扣留投票的视图, None 表示全部扣留
        equivocations: 指定视图的双重提案; EQUIVOCATE 副本每次担任领导者都会双重提案
        transcript: TRANSCRIPT 行为所执行的脚本名
    """

    model_config = ConfigDict(extra="ignore")

    behaviors: dict[int, ByzantineBehavior] = Field(default_factory=dict)
    withhold_views: list[int] | None = None
    equivocations: list[Equivocation] = Field(default_factory=list)
    transcript: TranscriptName | None = None

    @property
    def byzantine(self) -> set[int]:
        return set(self.behaviors)


class Expectation(BaseModel):
    """场景预期, 决定命令行退出码"""

    model_config = ConfigDict(extra="ignore")

    min_decisions: int | None = None
    max_decisions: int | None = None
    audit_violation: bool = False


class Scenario(BaseModel):
    """一次仿真运行的完整描述, 也是场景 JSON 文件的结构"""

    model_config = ConfigDict(extra="ignore")

    name: str = "ideal"
    description: str = ""
    protocol: Protocol = Protocol.EVENT
    net: NetConfig = Field(default_factory=NetConfig)
    pacemaker: PacemakerConfig = Field(default_factory=PacemakerConfig)
    byzantine: ByzantineScript = Field(default_factory=ByzantineScript)
    negative_variant: NegativeVariant | None = None
    max_views: int | None = Field(default=20, ge=1)
    max_ticks: int = Field(default=100_000, ge=1)
    max_decisions: int | None = None
    batch_size: int = Field(default=1, ge=1)
    expect: Expectation = Field(default_factory=Expectation)

    @model_validator(mode="after")
    def check_byzantine(self) -> "Scenario":
        byz = self.byzantine.byzantine
        if len(byz) > self.net.f:
            raise ConfigError(f"拜占庭副本数 {len(byz)} 超过 f={self.net.f}")
        if any(i < 0 or i >= self.net.n for i in byz):
            raise ConfigError(f"拜占庭副本编号越界: {sorted(byz)}")
        return self

    @property
    def update_mode(self) -> UpdateMode:
        return UpdateMode.TWO_PHASE if self.protocol == Protocol.TWO_PHASE else UpdateMode.THREE_PHASE


class ExploreAlphabet(str, Enum):
    """穷举时拜占庭提案者可选的动作集合

    EQUIVOCATION: 两条冲突分支在 1..max_views 的每个高度各有一个候选提案;
    VHEIGHT / DIRECT_PARENT: 两条分支按反例所需的高度交错排布;
    FORKS: 在每个节点(含创世节点)上, 对每个更高的高度各有一个候选提案.
    """

    EQUIVOCATION = "EQUIVOCATION"
    VHEIGHT = "VHEIGHT"
    DIRECT_PARENT = "DIRECT_PARENT"
    FORKS = "FORKS"


class ExploreBound(BaseModel):
    model_config = ConfigDict(extra="ignore")

    n: int = 4
    f: int = 1
    max_views: int | None = None
    alphabet: ExploreAlphabet = ExploreAlphabet.EQUIVOCATION
    mode: UpdateMode = UpdateMode.THREE_PHASE
    variant: NegativeVariant | None = None
    max_states: int = Field(default=1_000_000, ge=1)
    stop_on_violation: bool = False
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_small(self) -> "ExploreBound":
        if (self.n, self.f) != (4, 1):
            raise ConfigError("穷举只支持 n=4, f=1")
        return self

    @property
    def views(self) -> int:
        """未显式给定时: 三阶段 4, 两阶段 3"""
        if self.max_views is not None:
            return self.max_views
        return 3 if self.mode == UpdateMode.TWO_PHASE else 4


class RunConfig(BaseModel):
    """批量运行中的一次: 场景与覆盖的种子"""

    scenario: Scenario
    seed: int | None = None
    label: str = ""
