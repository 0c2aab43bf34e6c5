from ..model.Base import MsgType


class Phase:
    """Basic HotStuff 各阶段的消息类型与流转"""

    # 领导者收集完某阶段投票后广播的下一阶段消息
    NEXT = {
        MsgType.PREPARE: MsgType.PRE_COMMIT,
        MsgType.PRE_COMMIT: MsgType.COMMIT,
        MsgType.COMMIT: MsgType.DECIDE,
    }

    # 领导者消息应携带的证书类型
    CARRIES = {
        MsgType.PRE_COMMIT: MsgType.PREPARE,
        MsgType.COMMIT: MsgType.PRE_COMMIT,
        MsgType.DECIDE: MsgType.COMMIT,
    }

    LEADER_MSGS = (MsgType.PREPARE, MsgType.PRE_COMMIT, MsgType.COMMIT, MsgType.DECIDE)


class Defaults:
    """仿真与命令行的默认值"""

    SEED = 0
    DELTA = 10
    # 活性测试的时间上界 T_f = 8Δ: 四个阶段, 每阶段两跳
    T_F_HOPS = 8
    SUFFIX_DEPTH = 8
    LINEARITY_NS = (4, 7, 16, 31)
    LINEARITY_TOLERANCE = 0.10
    LIVELESS_VIEWS = 20


class Env:
    """.env 中识别的配置键"""

    CRYPTO = "CRYPTO"
    SEED = "SEED"
    PACEMAKER_KIND = "PACEMAKER_KIND"
    PACEMAKER_BASE_TIMEOUT = "PACEMAKER_BASE_TIMEOUT"
    PACEMAKER_BACKOFF_FACTOR = "PACEMAKER_BACKOFF_FACTOR"
    PACEMAKER_BEAT_POLICY = "PACEMAKER_BEAT_POLICY"
