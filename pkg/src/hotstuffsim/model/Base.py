from enum import Enum


class HotStuffError(Exception):
    """协议与仿真的统一异常"""

    code: int = 1000

    def __init__(self, message: str, detail: dict | None = None, code: int | None = None):
        self.code = code if code is not None else self.code
        self.message = message
        self.detail = detail or {}
        super().__init__(f"[{self.code}] {message}")


# -------------------- 密码学 --------------------


class SignerOutOfRange(HotStuffError):
    code = 1101


class InsufficientShares(HotStuffError):
    code = 1102


class MismatchedPayload(HotStuffError):
    code = 1103


class DigestCollision(HotStuffError):
    code = 1104


# -------------------- 节点树 --------------------


class OrphanParent(HotStuffError):
    code = 1201


class HeightMismatch(HotStuffError):
    code = 1202


class HeightNotAbove(HotStuffError):
    code = 1203


class UnknownNode(HotStuffError):
    code = 1204


class InvalidNode(HotStuffError):
    code = 1205


class InvalidJustify(HotStuffError):
    code = 1206


# -------------------- 协议 --------------------


class NotLeader(HotStuffError):
    code = 1301


class QuorumNotReached(HotStuffError):
    code = 1302


class WrongView(HotStuffError):
    code = 1303


class NotFromLeader(HotStuffError):
    code = 1304


class InvalidQC(HotStuffError):
    code = 1305


class UnsafeNode(HotStuffError):
    code = 1306


class InvalidPartialSig(HotStuffError):
    code = 1307


class ConflictingCommit(HotStuffError):
    """提交的节点与已执行分支冲突, 属于安全性违例信号, 不允许吞掉"""

    code = 1308


# -------------------- 仿真 / 校验 / 命令行 --------------------


class NotByzantine(HotStuffError):
    code = 1401


class ScenarioDiverged(HotStuffError):
    code = 1402


class BoundTooLarge(HotStuffError):
    code = 1501


class InsufficientPoints(HotStuffError):
    code = 1601


class ConfigError(HotStuffError):
    code = 2000


# ==========================================================
# 公共枚举
# ==========================================================


class MsgType(str, Enum):
    NEW_VIEW = "NEW-VIEW"
    PREPARE = "PREPARE"
    PRE_COMMIT = "PRE-COMMIT"
    COMMIT = "COMMIT"
    DECIDE = "DECIDE"
    GENERIC = "GENERIC"


class Protocol(str, Enum):
    BASIC = "basic"
    CHAINED = "chained"
    EVENT = "event"
    TWO_PHASE = "two-phase"


class NegativeVariant(str, Enum):
    """仅用于测试的弱化规则, 不符合协议"""

    VHEIGHT = "vheight"
    DIRECT_PARENT = "direct-parent"


class UpdateMode(str, Enum):
    THREE_PHASE = "THREE_PHASE"
    TWO_PHASE = "TWO_PHASE"
