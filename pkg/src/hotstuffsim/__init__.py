from .BasicHotStuff import BasicReplica
from .BlockTree import BlockTree
from .ChainedHotStuff import ChainedReplica, classify_chain
from .CryptoProvider import AuthenticatorLedger, MockCryptoProvider
from .EventDriven import EventDrivenReplica, plan_update, should_vote
from .Harness import (
    cli,
    linearity_fit,
    linearity_report,
    main,
    metrics_from_trace,
    render,
    run_batch,
    run_one,
)
from .model.ConfigModel import ExploreBound, RunConfig, Scenario
from .model.TraceModel import AuditReport, ExhaustiveReport, Metrics, RunResult
from .Oracle import audit, explore, liveness_report
from .Pacemaker import Pacemaker
from .SimNet import Simulator, load_scenario, run
from .Transcripts import run_liveless_two_phase, run_transcript, transcript_scenario
from .utils.EnvConfig import EnvConfig
from .utils.Logger import configure_logging, log


class HotStuffSim:
    """
    HotStuff 仿真客户端
    包含场景运行, 审计, 穷举与线性度测量
    """

    def __init__(self, envpath: str | None = None, verbose: bool = False):
        """初始化仿真客户端

        Args:
            envpath: 环境变量文件路径,默认None表示自动查找当前目录下的`.env`或用户根目录下的`.env.hotstuffsim`
            verbose: 是否启用详细日志输出,默认False
        """
        configure_logging(verbose=verbose, level="DEBUG" if verbose else "INFO")
        self.log = log
        self.verbose = verbose
        self.env = EnvConfig(envpath)
        self.crypto = self.env.crypto()
        log.info(f"仿真客户端就绪: 密码学后端={self.crypto}, 配置文件={self.env.path}")

    def scenario(self, path: str | None = None, **overrides) -> Scenario:
        """读取场景文件; 未给出时使用 .env 中的 pacemaker 与种子构造默认场景"""
        if path is not None:
            base = load_scenario(path)
        else:
            base = Scenario(pacemaker=self.env.pacemaker(), net={"seed": self.env.seed()})
        return base.model_copy(update=overrides) if overrides else base

    def run(self, scenario: Scenario, seed: int | None = None, dump_tree: bool = False) -> RunResult:
        return run_one(RunConfig(scenario=scenario, seed=seed), dump_tree=dump_tree)

    def batch(self, scenario: Scenario, runs: int, workers: int = 4) -> list[RunResult]:
        """以连续种子并行执行多次"""
        base = scenario.net.seed
        configs = [RunConfig(scenario=scenario, seed=base + i, label=f"{scenario.name}#{base + i}") for i in range(runs)]
        return run_batch(configs, workers=workers, verbose=self.verbose)

    def explore(self, bound: ExploreBound | None = None) -> ExhaustiveReport:
        return explore(bound or ExploreBound())


__all__ = [
    "AuditReport",
    "AuthenticatorLedger",
    "BasicReplica",
    "BlockTree",
    "ChainedReplica",
    "EnvConfig",
    "EventDrivenReplica",
    "ExhaustiveReport",
    "ExploreBound",
    "HotStuffSim",
    "Metrics",
    "MockCryptoProvider",
    "Pacemaker",
    "RunConfig",
    "RunResult",
    "Scenario",
    "Simulator",
    "audit",
    "classify_chain",
    "cli",
    "explore",
    "linearity_fit",
    "linearity_report",
    "liveness_report",
    "load_scenario",
    "log",
    "main",
    "metrics_from_trace",
    "plan_update",
    "render",
    "run",
    "run_batch",
    "run_liveless_two_phase",
    "run_one",
    "run_transcript",
    "should_vote",
    "transcript_scenario",
]
