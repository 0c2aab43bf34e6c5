import csv
import io
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import click
import numpy as np
from pydantic import ValidationError, validate_call
from tqdm import tqdm

from .model.Base import ConfigError, HotStuffError, InsufficientPoints, MsgType, NegativeVariant, Protocol, UpdateMode
from .model.ConfigModel import ExploreAlphabet, ExploreBound, NetConfig, RunConfig, Scenario
from .model.TraceModel import (
    AuditReport,
    LinearityFit,
    Metrics,
    RunResult,
    RunTrace,
    TraceKind,
    ViewChangeExtras,
)
from .Oracle import audit, explore, pipeline_latencies
from .SimNet import Simulator, load_scenario
from .Transcripts import transcript_scenario
from .utils.Constants import Defaults
from .utils.EnvConfig import EnvConfig
from .utils.Logger import configure_logging, log

# 线性拟合至少需要的不同 n 的个数
MIN_LINEARITY_POINTS = 4

# ==========================================================
# 指标
# ==========================================================


def count_viewchange_extras(trace: RunTrace) -> ViewChangeExtras:
    """视图切换带来的额外认证符: 被投递的 NEW-VIEW 消息所携带的 QC

    投票直接发给下一任领导者的协议在同步网络中不发送 NEW-VIEW, 额外认证符为 0.
    """
    correct = set(trace.correct)
    total = sum(e.auth for e in trace.of_kind(TraceKind.DELIVER) if e.phase == MsgType.NEW_VIEW.value)
    changes = {
        e.view
        for e in trace.of_kind(TraceKind.ENTER_VIEW)
        if e.replica in correct and e.view is not None and e.view > 1
    }
    return ViewChangeExtras(view_changes=len(changes), total=total)


def metrics_from_trace(trace: RunTrace, scenario: str = "", report: AuditReport | None = None) -> Metrics:
    """由轨迹计算输出指标; report 为空时现场审计"""
    report = report or audit(trace)
    per_view: dict[int, int] = {}
    for e in trace.of_kind(TraceKind.DELIVER):
        if e.view is not None and e.auth:
            per_view[e.view] = per_view.get(e.view, 0) + e.auth
    correct = set(trace.correct)
    decided = {e.node for e in trace.of_kind(TraceKind.COMMIT) if e.replica in correct}
    latency = Counter(commit - proposed for proposed, commit in pipeline_latencies(trace))
    return Metrics(
        protocol=trace.protocol,
        scenario=scenario,
        seed=trace.seed,
        n=trace.n,
        f=trace.f,
        per_replica_authenticators_received=list(trace.authenticators),
        total_authenticators_per_view=dict(sorted(per_view.items())),
        extra_viewchange_authenticators=count_viewchange_extras(trace).total,
        decisions=len(decided),
        views_elapsed=trace.views_elapsed,
        commit_latency_views=dict(sorted(latency.items())),
        stopped_by=trace.stopped_by,
        final_tick=trace.final_tick,
        audit_ok=report.ok,
        safety_ok=report.safety_ok,
        violations=report.violations,
    )


def render(metrics: Metrics | list[Metrics], fmt: str = "json") -> str:
    """JSON 为规范输出, CSV 为同一字段的扁平投影(嵌套字段以 JSON 字符串写入)"""
    rows = metrics if isinstance(metrics, list) else [metrics]
    dumped = [m.model_dump(mode="json") for m in rows]
    if fmt == "json":
        payload = dumped if isinstance(metrics, list) else dumped[0]
        return json.dumps(payload, ensure_ascii=False, indent=2)
    if fmt != "csv":
        raise ConfigError(f"不支持的输出格式: {fmt}")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(Metrics.model_fields), lineterminator="\n")
    writer.writeheader()
    for row in dumped:
        writer.writerow({k: json.dumps(v, ensure_ascii=False) if isinstance(v, (dict, list)) else v for k, v in row.items()})
    return buf.getvalue()


# ==========================================================
# 运行
# ==========================================================


def run_one(config: RunConfig, dump_tree: bool = False) -> RunResult:
    """执行一次仿真并审计

    Raises:
        ScenarioDiverged: 脚本化调度偏离预期
    """
    sim = Simulator(config.scenario, seed=config.seed)
    trace = sim.run()
    report = audit(trace)
    dot = sim.replicas[trace.correct[0]].tree.to_dot() if dump_tree else ""
    return RunResult(
        label=config.label,
        scenario=config.scenario.name,
        trace=trace,
        audit=report,
        metrics=metrics_from_trace(trace, config.scenario.name, report),
        tree_dot=dot,
    )


def run_batch(
    configs: list[RunConfig],
    *,
    workers: int = 4,
    verbose: bool = False,
    dump_tree: bool = False,
) -> list[RunResult]:
    """并行执行互不相关的多次运行, 结果按输入顺序返回"""
    results: list[RunResult | None] = [None] * len(configs)
    progress = tqdm(total=len(configs), desc="仿真进度", unit="run", disable=not verbose)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = {executor.submit(run_one, c, dump_tree): i for i, c in enumerate(configs)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
            progress.update(1)
    progress.close()
    return [r for r in results if r is not None]


# ==========================================================
# 线性度
# ==========================================================


def per_view_total(metrics: Metrics) -> float:
    """稳定阶段每个视图的认证符总数(取中位数, 排除首尾视图)"""
    views = sorted(metrics.total_authenticators_per_view)
    steady = views[1:-1] or views
    if not steady:
        return 0.0
    return float(np.median([metrics.total_authenticators_per_view[v] for v in steady]))


def linearity_fit(ns: list[int], totals: list[float], tolerance: float = Defaults.LINEARITY_TOLERANCE) -> LinearityFit:
    """最小二乘拟合 totals ≈ slope·n + intercept, 报告最大相对残差

    Raises:
        InsufficientPoints: 不同的 n 少于 4 个
    """
    if len(set(ns)) < MIN_LINEARITY_POINTS or len(ns) != len(totals):
        raise InsufficientPoints(f"线性拟合至少需要 {MIN_LINEARITY_POINTS} 个不同的 n, 实际 {sorted(set(ns))}")
    x = np.asarray(ns, dtype=float)
    y = np.asarray(totals, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    residual = np.abs(y - (slope * x + intercept)) / np.maximum(np.abs(y), 1.0)
    return LinearityFit(
        ns=list(ns),
        totals=[float(t) for t in totals],
        slope=float(slope),
        intercept=float(intercept),
        max_residual_ratio=float(residual.max()),
        tolerance=tolerance,
    )


@validate_call
def linearity_report(
    protocol: Protocol = Protocol.EVENT,
    ns: tuple[int, ...] = Defaults.LINEARITY_NS,
    *,
    views: int = 12,
    seed: int = Defaults.SEED,
    workers: int = 4,
    verbose: bool = False,
) -> LinearityFit:
    """在单跳延迟固定为 1 的同步网络下对每个 n 各跑一次, 拟合每视图认证符总数与 n 的关系

    固定延迟下没有提案乱序, 每个视图的计数不受调度抖动影响.
    """
    if len(set(ns)) < MIN_LINEARITY_POINTS:
        raise InsufficientPoints(f"线性拟合至少需要 {MIN_LINEARITY_POINTS} 个不同的 n")
    configs = [
        RunConfig(
            scenario=Scenario(
                name=f"linearity-n{n}",
                protocol=protocol,
                net=NetConfig(n=n, f=(n - 1) // 3, delta=1, seed=seed),
                max_views=views,
            ),
            seed=seed,
            label=f"n={n}",
        )
        for n in ns
    ]
    results = run_batch(configs, workers=workers, verbose=verbose)
    fit = linearity_fit(list(ns), [per_view_total(r.metrics) for r in results])
    log.info(f"线性拟合: slope={fit.slope:.2f} intercept={fit.intercept:.2f} 最大残差比={fit.max_residual_ratio:.3f}")
    return fit


# ==========================================================
# 命令行
# ==========================================================


def build_scenario(
    *,
    path: str | None = None,
    protocol: str | None = None,
    n: int | None = None,
    f: int | None = None,
    seed: int | None = None,
    views: int | None = None,
    ticks: int | None = None,
    variant: str | None = None,
    env: EnvConfig | None = None,
) -> Scenario:
    """按 场景文件 / 内置脚本 / .env / 命令行 的顺序叠加配置, 后者覆盖前者

    Raises:
        ConfigError: 场景文件或参数组合不合法
    """
    if path is not None:
        base = load_scenario(path)
    elif variant is not None:
        base = transcript_scenario(variant, negative_variant=NegativeVariant(variant))
    else:
        base = Scenario()
        if env is not None:
            base = base.model_copy(update={"pacemaker": env.pacemaker()})

    data = base.model_dump()
    net = data["net"]
    if protocol is not None:
        data["protocol"] = protocol
    if n is not None:
        net["n"] = n
        if f is None:
            net["f"] = (n - 1) // 3
    if f is not None:
        net["f"] = f
    if seed is not None:
        net["seed"] = seed
    elif path is None and env is not None:
        net["seed"] = env.seed(net["seed"])
    if views is not None:
        data["max_views"] = views
    if ticks is not None:
        data["max_ticks"] = ticks
    if variant is not None:
        data["negative_variant"] = variant
    return Scenario.model_validate(data)


def outcome_code(scenario: Scenario, results: list[RunResult]) -> int:
    """退出码: 审计与场景预期都满足为 0, 否则为 1; 弱化规则下出现违例才算满足"""
    negative = scenario.negative_variant is not None or scenario.expect.audit_violation
    expect = scenario.expect
    for r in results:
        if negative and r.audit.safety_ok:
            log.error(f"{r.label or r.scenario}: 弱化规则下未出现预期的违例")
            return 1
        if not negative and not r.audit.ok:
            log.error(f"{r.label or r.scenario}: 审计失败 {r.audit.notes}")
            return 1
        d = r.metrics.decisions
        if expect.min_decisions is not None and d < expect.min_decisions:
            log.error(f"{r.label or r.scenario}: 决议数 {d} 少于预期 {expect.min_decisions}")
            return 1
        if expect.max_decisions is not None and d > expect.max_decisions:
            log.error(f"{r.label or r.scenario}: 决议数 {d} 多于预期 {expect.max_decisions}")
            return 1
    return 0


def pick_alphabet(alphabet: str | None, variant: str | None) -> ExploreAlphabet:
    """未指定模板时, 弱化规则使用其反例模板, 否则使用 EQUIVOCATION"""
    if alphabet is not None:
        return ExploreAlphabet(alphabet)
    if variant is not None:
        return ExploreAlphabet[variant.upper().replace("-", "_")]
    return ExploreAlphabet.EQUIVOCATION


def emit(text: str, out_path: str | None) -> None:
    if out_path is None:
        click.echo(text)
        return
    Path(out_path).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    log.info(f"结果已写入 {out_path}")


PROTOCOLS = [p.value for p in Protocol]
VARIANTS = [v.value for v in NegativeVariant]


@click.command(name="hotstuffsim", context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--protocol", type=click.Choice(PROTOCOLS), default=None, help="协议变体")
@click.option("--replicas", "n", type=int, default=None, help="副本数 n")
@click.option("--faults", "f", type=int, default=None, help="容错数 f, 默认 (n-1)//3")
@click.option("--seed", type=int, default=None, help="随机种子")
@click.option("--scenario", "scenario_path", type=click.Path(dir_okay=False), default=None, help="场景 JSON 文件")
@click.option("--views", type=int, default=None, help="视图预算")
@click.option("--ticks", type=int, default=None, help="虚拟 tick 预算")
@click.option("--output", "fmt", type=click.Choice(["json", "csv"]), default="json", help="输出格式")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="输出文件, 默认标准输出")
@click.option("--explore", "do_explore", is_flag=True, help="穷举小模型的所有调度")
@click.option("--negative-variant", "variant", type=click.Choice(VARIANTS), default=None, help="弱化规则(预期出现违例)")
@click.option("--alphabet", type=click.Choice([a.value for a in ExploreAlphabet]), default=None, help="穷举时拜占庭提案者的模板")
@click.option("--dump-tree", type=click.Path(dir_okay=False), default=None, help="把第一个正确副本的节点树写成 DOT")
@click.option("--runs", type=int, default=1, help="以连续种子并行执行的运行次数")
@click.option("--linearity", is_flag=True, help="在 n=4,7,16,31 上拟合每视图认证符总数")
@click.option("--crypto", type=click.Choice(["mock"]), default=None, help="密码学后端")
@click.option("--env", "envpath", type=click.Path(dir_okay=False), default=None, help=".env 配置文件")
@click.option("--verbose", is_flag=True, help="输出日志与进度条")
@click.pass_context
def cli(
    ctx: click.Context,
    protocol: str | None,
    n: int | None,
    f: int | None,
    seed: int | None,
    scenario_path: str | None,
    views: int | None,
    ticks: int | None,
    fmt: str,
    out_path: str | None,
    do_explore: bool,
    variant: str | None,
    alphabet: str | None,
    dump_tree: str | None,
    runs: int,
    linearity: bool,
    crypto: str | None,
    envpath: str | None,
    verbose: bool,
) -> None:
    """HotStuff 家族协议仿真, 审计与指标输出"""
    configure_logging(verbose=verbose, level="DEBUG" if verbose else "INFO")
    try:
        env = EnvConfig(envpath)
        crypto = crypto or env.crypto()

        if linearity:
            fit = linearity_report(Protocol(protocol or Protocol.EVENT.value), seed=seed or 0, verbose=verbose)
            emit(fit.model_dump_json(indent=2), out_path)
            ctx.exit(0 if fit.linear else 1)

        if do_explore:
            mode = UpdateMode.TWO_PHASE if protocol == Protocol.TWO_PHASE.value else UpdateMode.THREE_PHASE
            bound = ExploreBound(
                max_views=views,
                alphabet=pick_alphabet(alphabet, variant),
                mode=mode,
                variant=NegativeVariant(variant) if variant else None,
                workers=max(1, runs),
            )
            report = explore(bound)
            emit(report.model_dump_json(indent=2), out_path)
            ctx.exit(0 if report.ok == (variant is None) else 1)

        scenario = build_scenario(
            path=scenario_path,
            protocol=protocol,
            n=n,
            f=f,
            seed=seed,
            views=views,
            ticks=ticks,
            variant=variant,
            env=env,
        )
        base_seed = scenario.net.seed
        configs = [
            RunConfig(scenario=scenario, seed=base_seed + i, label=f"{scenario.name}#{base_seed + i}")
            for i in range(max(1, runs))
        ]
        log.info(f"场景 {scenario.name}: 协议={scenario.protocol.value} 运行 {len(configs)} 次, 密码学后端={crypto}")
        results = run_batch(configs, verbose=verbose, dump_tree=dump_tree is not None)
    except (ConfigError, ValidationError) as e:
        click.echo(f"配置错误: {e}", err=True)
        ctx.exit(2)
    except HotStuffError as e:
        click.echo(f"运行失败: {e}", err=True)
        ctx.exit(1)

    metrics = [r.metrics for r in results]
    emit(render(metrics if len(metrics) > 1 else metrics[0], fmt), out_path)
    if dump_tree is not None:
        Path(dump_tree).write_text(results[0].tree_dot + "\n", encoding="utf-8")
    ctx.exit(outcome_code(scenario, results))


def main(args: list[str] | None = None) -> int:
    """命令行入口, 返回退出码"""
    try:
        code = cli.main(args=args, prog_name="hotstuffsim", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        return 1
    return code or 0
