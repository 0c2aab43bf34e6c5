from pydantic import BaseModel, ConfigDict, Field

from .Base import MsgType
from .CryptoModel import Digest, ThresholdSig

# 创世节点的父指针标记
GENESIS_PARENT: str = "0" * 64


class QuorumCert(BaseModel):
    """对 ⟨type, viewNumber, node⟩ 的法定人数证书"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    qtype: MsgType
    view: int = Field(ge=0)
    node: Digest
    sig: ThresholdSig

    @staticmethod
    def encode(qtype: MsgType, view: int, node: str) -> bytes:
        """签名所覆盖的三元组编码"""
        return f"{qtype.value}|{view}|{node}".encode()

    @property
    def payload(self) -> bytes:
        return self.encode(self.qtype, self.view, self.node)


class Node(BaseModel):
    """节点树中的一个节点, id 为 (parent, cmd, justify, height) 的摘要"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: Digest
    parent: Digest
    cmd: str = ""
    justify: QuorumCert | None = None
    height: int = Field(ge=0)

    @staticmethod
    def content(parent: str, cmd: str, justify: QuorumCert | None, height: int) -> bytes:
        jkey = justify.payload.decode() if justify is not None else "-"
        return f"{parent}|{cmd}|{jkey}|{height}".encode()

    @property
    def is_genesis(self) -> bool:
        return self.parent == GENESIS_PARENT

    @property
    def is_dummy(self) -> bool:
        """空白填充节点: 无命令, 无 justify"""
        return not self.is_genesis and self.cmd == "" and self.justify is None

    @property
    def short(self) -> str:
        return self.id[:8]


class ChainReport(BaseModel):
    """以 b* 为尾的 QC 链判定结果, 每一环都要求直接父子关系"""

    model_config = ConfigDict(frozen=True)

    one_chain: Node | None = None
    two_chain: Node | None = None
    three_chain: Node | None = None


class UpdatePlan(BaseModel):
    """收到 b* 后应执行的状态更新: 候选 qc_high, 候选锁节点, 可提交节点"""

    model_config = ConfigDict(frozen=True)

    qc: QuorumCert | None = None
    lock: Node | None = None
    commit: Node | None = None
