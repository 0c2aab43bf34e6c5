from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .Base import MsgType
from .CryptoModel import PartialSig
from .TreeModel import Node, QuorumCert


class ProtocolMsg(BaseModel):
    """线路上的协议消息

    投票消息携带 partial_sig, 领导者广播携带 justify, 二者互斥.
    ancestors 为提案所在分支中未提交的后缀, 供落后的副本补齐本地树.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    mtype: MsgType
    view: int = Field(ge=0)
    sender: int = Field(ge=0)
    node: Node | None = None
    justify: QuorumCert | None = None
    partial_sig: PartialSig | None = None
    ancestors: tuple[Node, ...] = ()

    @model_validator(mode="after")
    def check_shape(self) -> "ProtocolMsg":
        if self.partial_sig is not None and self.justify is not None:
            raise ValueError("投票消息不能同时携带 justify")
        return self

    @property
    def is_vote(self) -> bool:
        return self.partial_sig is not None

    @property
    def qc(self) -> QuorumCert | None:
        """消息携带的证书: 优先 justify, 其次提案节点内嵌的 justify"""
        if self.justify is not None:
            return self.justify
        if self.node is not None and not self.is_vote:
            return self.node.justify
        return None

    @property
    def authenticators(self) -> int:
        """接收方因此消息收到的认证符数量: 部分签名或门限签名各计 1"""
        if self.is_vote:
            return 1
        return 1 if self.qc is not None else 0


class TimerKind(str, Enum):
    VIEW = "VIEW"
    BEAT = "BEAT"


class TimerFire(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: TimerKind = TimerKind.VIEW
    view: int


class Envelope(BaseModel):
    """待发送消息; dest 为 None 表示广播(包括自己)"""

    model_config = ConfigDict(frozen=True)

    dest: int | None
    msg: ProtocolMsg


class TimerRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    fire: TimerFire
    after: int = Field(ge=0)


class Record(BaseModel):
    """副本产生的轨迹记录, 由仿真器补全时间戳与副本编号"""

    kind: str
    view: int | None = None
    node: str | None = None
    phase: str | None = None
    detail: dict[str, Any] = Field(default_factory=dict)


class Outbox(BaseModel):
    """一次 step 的全部输出"""

    sends: list[Envelope] = Field(default_factory=list)
    timers: list[TimerRequest] = Field(default_factory=list)
    records: list[Record] = Field(default_factory=list)
    nodes: list[Node] = Field(default_factory=list)

    def extend(self, other: "Outbox") -> "Outbox":
        self.sends.extend(other.sends)
        self.timers.extend(other.timers)
        self.records.extend(other.records)
        self.nodes.extend(other.nodes)
        return self
