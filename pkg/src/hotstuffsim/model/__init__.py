from .Base import HotStuffError, MsgType, NegativeVariant, Protocol, UpdateMode
from .ConfigModel import (
    BeatPolicy,
    ByzantineBehavior,
    ByzantineScript,
    ExploreAlphabet,
    ExploreBound,
    NetConfig,
    PacemakerConfig,
    PacemakerKind,
    PreGstKind,
    PreGstPolicy,
    RunConfig,
    Scenario,
)
from .CryptoModel import Digest, PartialSig, ThresholdSig
from .MsgModel import Envelope, Outbox, ProtocolMsg, Record, TimerFire, TimerKind, TimerRequest
from .TraceModel import (
    AuditReport,
    ExhaustiveReport,
    LinearityFit,
    LivenessReport,
    Metrics,
    RunResult,
    RunTrace,
    TraceEvent,
    TraceKind,
    ViewChangeExtras,
    Violation,
)
from .TreeModel import GENESIS_PARENT, ChainReport, Node, QuorumCert, UpdatePlan

__all__ = [
    "AuditReport",
    "BeatPolicy",
    "ByzantineBehavior",
    "ByzantineScript",
    "ChainReport",
    "Digest",
    "Envelope",
    "ExhaustiveReport",
    "ExploreAlphabet",
    "ExploreBound",
    "GENESIS_PARENT",
    "HotStuffError",
    "LinearityFit",
    "LivenessReport",
    "Metrics",
    "MsgType",
    "NegativeVariant",
    "NetConfig",
    "Node",
    "Outbox",
    "PacemakerConfig",
    "PacemakerKind",
    "PartialSig",
    "PreGstKind",
    "PreGstPolicy",
    "Protocol",
    "ProtocolMsg",
    "QuorumCert",
    "Record",
    "RunConfig",
    "RunResult",
    "RunTrace",
    "Scenario",
    "ThresholdSig",
    "TimerFire",
    "TimerKind",
    "TimerRequest",
    "TraceEvent",
    "TraceKind",
    "UpdateMode",
    "UpdatePlan",
    "ViewChangeExtras",
    "Violation",
]
