from typing import Annotated

from pydantic import BaseModel, ConfigDict, Field, StringConstraints, model_validator

# 32 字节摘要, 以 64 位十六进制字符串表示
Digest = Annotated[str, StringConstraints(pattern=r"^[0-9a-f]{64}$")]


class PartialSig(BaseModel):
    """单个副本的部分签名"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    signer: int = Field(ge=0)
    payload_digest: Digest
    tag: str


class ThresholdSig(BaseModel):
    """门限签名: 以部分签名集合表示, 一个门限签名只计为一个认证符"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    payload_digest: Digest
    parts: frozenset[PartialSig]

    @model_validator(mode="after")
    def check_parts(self) -> "ThresholdSig":
        """所有部分签名必须针对同一摘要, 且签名者两两不同"""
        signers = [p.signer for p in self.parts]
        if len(signers) != len(set(signers)):
            raise ValueError("parts 中存在重复的签名者")
        if any(p.payload_digest != self.payload_digest for p in self.parts):
            raise ValueError("parts 中存在不同的 payload_digest")
        return self

    @property
    def signers(self) -> list[int]:
        return sorted(p.signer for p in self.parts)
