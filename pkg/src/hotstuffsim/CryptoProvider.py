import hashlib
from collections.abc import Iterable

from pydantic import validate_call

from .model.Base import DigestCollision, InsufficientShares, MismatchedPayload, SignerOutOfRange
from .model.CryptoModel import PartialSig, ThresholdSig
from .model.MsgModel import ProtocolMsg


class MockCryptoProvider:
    """确定性的 (k, n) 门限签名与哈希模拟实现, k = 2f+1

    部分签名的 tag = h(签名者种子 || 消息摘要), 签名者种子由运行种子与编号派生.
    只有掌握种子的一方才能伪造对应编号的 tag.

    Example:
        ```python
        crypto = MockCryptoProvider(n=4, f=1, seed=7)
        parts = {crypto.tsign(i, b"m") for i in range(3)}
        sig = crypto.tcombine(b"m", parts)
        assert crypto.tverify(b"m", sig)
        ```
    """

    name = "mock"

    def __init__(self, n: int, f: int, seed: int = 0, track_collisions: bool = False):
        self.n = n
        self.f = f
        self.seed = seed
        self.threshold = 2 * f + 1
        self._secrets = [self._digest(f"secret|{seed}|{i}".encode()) for i in range(n)]
        # 测试构建中的碰撞登记表: 摘要 -> 原文
        self._registry: dict[str, bytes] | None = {} if track_collisions else None

    @staticmethod
    def _digest(payload: bytes) -> str:
        return hashlib.sha256(payload).hexdigest()

    # -------------------- 哈希 --------------------

    def hash(self, payload: bytes) -> str:
        """消息摘要, 固定 32 字节(64 位十六进制)"""
        digest = self._digest(payload)
        if self._registry is not None:
            seen = self._registry.setdefault(digest, payload)
            if seen != payload:
                raise DigestCollision("摘要碰撞", {"digest": digest})
        return digest

    # -------------------- 签名 --------------------

    def _tag(self, signer: int, payload_digest: str) -> str:
        return self._digest(f"{self._secrets[signer]}|{payload_digest}".encode())

    @validate_call
    def tsign(self, signer: int, payload: bytes) -> PartialSig:
        """副本 signer 对 payload 的部分签名

        Raises:
            SignerOutOfRange: signer 不在 [0, n) 内
        """
        if not 0 <= signer < self.n:
            raise SignerOutOfRange(f"签名者 {signer} 不在 [0, {self.n}) 内")
        digest = self.hash(payload)
        return PartialSig(signer=signer, payload_digest=digest, tag=self._tag(signer, digest))

    def verify_part(self, payload_digest: str, part: PartialSig) -> bool:
        if part.payload_digest != payload_digest or not 0 <= part.signer < self.n:
            return False
        return part.tag == self._tag(part.signer, payload_digest)

    def tcombine(self, payload: bytes, parts: Iterable[PartialSig]) -> ThresholdSig:
        """把至少 2f+1 个来自不同签名者的有效部分签名合成门限签名

        同一签名者重复出现只计一次, 验证失败的部分签名被忽略.

        Raises:
            MismatchedPayload: 某个部分签名针对的是其他消息
            InsufficientShares: 不同签名者的有效部分签名少于 2f+1
        """
        digest = self.hash(payload)
        chosen: dict[int, PartialSig] = {}
        for part in sorted(parts, key=lambda p: (p.signer, p.tag)):
            if part.payload_digest != digest:
                raise MismatchedPayload(f"签名者 {part.signer} 的部分签名针对其他消息")
            if part.signer not in chosen and self.verify_part(digest, part):
                chosen[part.signer] = part
        if len(chosen) < self.threshold:
            raise InsufficientShares(
                f"有效签名者 {len(chosen)} 个, 少于门限 {self.threshold}",
                {"signers": sorted(chosen)},
            )
        return ThresholdSig(payload_digest=digest, parts=frozenset(chosen.values()))

    def tverify(self, payload: bytes, sig: ThresholdSig) -> bool:
        """sig 中是否含有至少 2f+1 个针对 payload 的不同签名者的有效部分签名"""
        try:
            digest = self._digest(payload)
            if sig.payload_digest != digest:
                return False
            valid = {p.signer for p in sig.parts if self.verify_part(digest, p)}
            return len(valid) >= self.threshold
        except (AttributeError, TypeError):
            return False


class AuthenticatorLedger:
    """按副本统计收到的认证符: 每个被接收的部分签名或门限签名计一次"""

    def __init__(self, n: int):
        self.received = [0] * n

    def record(self, replica: int, msg: ProtocolMsg) -> int:
        count = msg.authenticators
        self.received[replica] += count
        return count

    @property
    def total(self) -> int:
        return sum(self.received)
