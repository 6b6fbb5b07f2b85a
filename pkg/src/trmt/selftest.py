"""自检模块

把各模块的性质检验汇总成一份确定性的报告。
quick 级别在几分钟内跑完；full 级别包括标度拟合与高斯收敛扫描，
耗时以小时计。相同种子下报告的 JSON 逐字节一致(不记录耗时)。
"""

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from loguru import logger

from .chebyshev import Scaling, build_calibration, centred_statistics, eig_traces, power_traces, spectral_traces
from .cycles import (
    DEFAULT_ENUMERATION_BUDGET,
    NBCycle,
    census,
    classify_cycle,
    cycle_sum,
    hashimoto_cycle_sum,
    identity_discrepancy,
    lambda_statistic,
)
from .dynamics import (
    exact_conditional_moments,
    extract_remainders,
    fit_remainder_scaling,
    indicator_simplification_check,
    remainder_sweep,
)
from .ensemble import (
    Ensemble,
    count_directed_triangles,
    regular_triangle_count,
    run_chain,
    sample_ensemble,
    sample_ite,
    seed_regular,
)
from .exceptions import PreconditionError
from .oracle import (
    EdgeSet,
    REGULAR_COUNTS,
    chain_census,
    edge_product_decay_fit,
    edge_product_expectation,
    enumerate_members,
    enumerate_regular,
    mckay_integral_expectation,
    mckay_ratios,
)
from .rng import RngStream
from .stats import CheckResult, convergence_sweep, gaussianity_from_array
from .stein import (
    OUSpec,
    QuadratureGrid,
    function_bound_check,
    random_polynomial,
    stein_lemma_mc,
    stein_residual,
    time_integral_constant,
)

LEVELS = ("quick", "full")

# 积分表示与精确枚举的比对用的偶数边集(N=5 与 N=7)
APPENDIX_EDGE_SETS = (
    ((0, 1), (2, 3)),
    ((0, 1), (1, 2)),
    ((0, 1), (1, 2), (2, 3), (3, 0)),
    ((0, 2), (1, 3)),
    ((0, 1), (0, 2), (0, 3), (0, 4)),
)

ODD_EDGE_SET = ((0, 1), (1, 2), (3, 4))

# 相邻两条边：行和为0给出 E[H_E] = -1/(N-2)
DECAY_EDGE_SET = ((0, 1), (1, 2))
DECAY_EXPONENT_LIMIT = -0.6


@dataclass
class SelftestReport:
    """自检报告"""

    seed: int
    level: str
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def to_json(self) -> Dict[str, object]:
        return {
            "seed": self.seed,
            "level": self.level,
            "passed": self.passed,
            "checks": [c.to_json() for c in self.checks],
        }


def _at_most(name: str, value: float, threshold: float) -> CheckResult:
    return CheckResult(name, float(value), float(threshold), bool(value <= threshold))


def _equal(name: str, value: int, expected: int) -> CheckResult:
    return CheckResult(name, float(value), float(expected), value == expected)


def structural_checks(rng: RngStream, N: int = 7, states: int = 200) -> List[CheckResult]:
    """RITE 链状态的行和、有向三角形数与迹"""
    trajectory = run_chain(seed_regular(N), Ensemble.RITE, states - 1, rng.child("structural"), thin=1)
    d = regular_triangle_count(N)
    row_sum = max(int(np.max(np.abs(H.row_sums()))) for H in trajectory)
    triangles = {count_directed_triangles(H) for H in trajectory}
    triangle_error = max(abs(t - d) for t in triangles)
    square_error = 0.0
    odd_trace = 0.0
    for H in trajectory:
        M = H.hermitian
        square = M @ M
        square_error = max(square_error, abs(float(np.trace(square).real) - N * (N - 1)))
        odd_trace = max(odd_trace, abs(np.trace(M)), abs(np.trace(square @ M)))
    ite = sample_ite(N + 1, rng.child("structural-ite"))
    power_gap = float(np.max(np.abs(eig_traces(ite, 4) - power_traces(ite, 4))))
    return [
        _equal(f"structural[row_sum,N={N}]", row_sum, 0),
        _equal(f"structural[triangles,N={N}]", triangle_error, 0),
        _at_most(f"structural[trace_square,N={N}]", square_error, 1e-9),
        _at_most(f"structural[odd_traces,N={N}]", float(odd_trace), 1e-9),
        _at_most(f"structural[power_vs_eig,N={N + 1}]", power_gap, 1e-8),
    ]


def census_checks(rng: RngStream, steps: int, long_running: bool = False) -> List[CheckResult]:
    """正则锦标赛计数、链的均匀性与 McKay 公式"""
    results = [_equal(f"census[|R_{N}|]", enumerate_regular(N).count, REGULAR_COUNTS[N]) for N in (3, 5, 7)]

    visits = chain_census(5, steps, rng.child("census-chain"))
    results.append(_equal("census[chain_visits,N=5]", visits.distinct, visits.expected))
    results.append(CheckResult("census[chain_chi2_p,N=5]", visits.p_value, 0.01, visits.p_value > 0.01))

    grid = (5, 7, 9) if long_running else (5, 7)
    rows = mckay_ratios(grid, long_running=long_running)
    errors = [abs(float(row["ratio"]) - 1) for row in rows]  # type: ignore[arg-type]
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    results.append(CheckResult(f"census[mckay_decreasing,N={list(grid)}]", errors[-1], errors[0], decreasing))
    return results


def recount_cycle_classes(N: int, L: int) -> Tuple[int, int, int, int]:
    """逐个检查 N^L 个顶点序列，独立重数非回溯圈、Λ 圈与 Λ* 圈

    Returns:
        (总数, Λ 个数, Λ* 个数, Betti 数与圈基大小不一致的圈数)
    """
    total = lambdas = stars = mismatches = 0
    for walk in product(range(N), repeat=L):
        if any(walk[i] == walk[(i + 1) % L] or walk[i] == walk[(i + 2) % L] for i in range(L)):
            continue
        total += 1
        traced = nx.MultiGraph()
        traced.add_edges_from((walk[i], walk[(i + 1) % L]) for i in range(L))
        simple = nx.Graph(traced)
        if any(traced.number_of_edges(u, v) % 2 == 1 for u, v in simple.edges()):
            lambdas += 1
        if simple.number_of_edges() == L:
            stars += 1
        if classify_cycle(NBCycle(walk)).betti != len(nx.cycle_basis(simple)):
            mismatches += 1
    return total, lambdas, stars, mismatches


def identity_checks(
    rng: RngStream, N_values: Sequence[int], trials: int, max_n: int = 6, budget: int = DEFAULT_ENUMERATION_BUDGET
) -> List[CheckResult]:
    """圈求和迹与特征值迹的一致性，两个系综"""
    results = []
    for ensemble in (Ensemble.ITE, Ensemble.RITE):
        worst = 0.0
        for N in N_values:
            if ensemble is Ensemble.RITE and N % 2 == 0:
                continue
            states = sample_ensemble(ensemble, N, trials, rng.child(f"identity-{ensemble.value}-{N}"))
            for H in states:
                for n in range(1, max_n + 1):
                    worst = max(worst, identity_discrepancy(H, n, budget))
        results.append(_at_most(f"identity[{ensemble.value},N={list(N_values)}]", worst, 1e-8))

    H = sample_ite(6, rng.child("hashimoto"))
    gap = max(abs(cycle_sum(H, L) - hashimoto_cycle_sum(H, L)) for L in (3, 4, 5))
    results.append(_at_most("identity[hashimoto,N=6]", gap, 1e-6))

    for L in (4, 5, 6):
        counts = census(5, L)
        total, lambdas, stars, mismatches = recount_cycle_classes(5, L)
        results.append(_equal(f"identity[census_total,N=5,L={L}]", counts.total, total))
        results.append(_equal(f"identity[census_lambda,N=5,L={L}]", counts.lambda_count, lambdas))
        results.append(_equal(f"identity[census_lambda_star,N=5,L={L}]", counts.lambda_star, stars))
        results.append(_equal(f"identity[betti_vs_cycle_basis,N=5,L={L}]", mismatches, 0))
    return results


def lambda_checks(rng: RngStream, N: int = 5, k_max: int = 3) -> List[CheckResult]:
    """ITE 下 Y_n 等于 Λ_{2n} 圈求和的形式(精确中心化)"""
    table = build_calibration(Ensemble.ITE, N, k_max, 0, rng.child("lambda-calibration"), Scaling.LEMMA)
    worst = 0.0
    for H in sample_ensemble(Ensemble.ITE, N, 5, rng.child("lambda-states")):
        Y = centred_statistics(H, table, k_max)
        for n in range(1, k_max + 1):
            worst = max(worst, abs(Y.y(n) - lambda_statistic(H, n)))
    return [_at_most(f"lambda_form[ITE,N={N}]", worst, 1e-9)]


def _trace_functional(degree: int) -> Callable:
    return lambda H: float(spectral_traces(H, [degree], Scaling.LEMMA)[0])


def indicator_checks(rng: RngStream, sampled: int = 10) -> List[CheckResult]:
    """三角形指示函数求和的简化形式"""
    exhaustive = max(indicator_simplification_check(H, _trace_functional(4)) for H in enumerate_regular(5))
    states = sample_ensemble(Ensemble.RITE, 7, sampled, rng.child("indicator"))
    chain = max(indicator_simplification_check(H, _trace_functional(6)) for H in states)
    return [
        _at_most("indicator[T_4,N=5,all]", exhaustive, 1e-10),
        _at_most(f"indicator[T_6,N=7,{sampled}_states]", chain, 1e-10),
    ]


def stationarity_checks(k_max: int = 3) -> List[CheckResult]:
    """系综平均的条件漂移为0"""
    results = []
    for ensemble, N in ((Ensemble.RITE, 5), (Ensemble.ITE, 4)):
        drifts = np.array([exact_conditional_moments(H, ensemble, k_max).drift for H in enumerate_members(ensemble, N)])
        worst = float(np.max(np.abs(drifts.mean(axis=0))))
        results.append(_at_most(f"stationarity[{ensemble.value},N={N}]", worst, 1e-10))
    return results


def remainder_identity_checks(rng: RngStream, N: int = 5, k_max: int = 3) -> List[CheckResult]:
    """余项按定义 R_n = c·E[δY_n|H] + nY_n 的独立重算"""
    table = build_calibration(Ensemble.ITE, N, k_max, 0, rng.child("remainder-calibration"))
    worst = 0.0
    for H in sample_ensemble(Ensemble.ITE, N, 5, rng.child("remainder-states")):
        moments = exact_conditional_moments(H, Ensemble.ITE, k_max)
        Y = centred_statistics(H, table, k_max)
        remainder = extract_remainders(moments, Y)
        for n in range(1, k_max + 1):
            direct = moments.normalizer * float(moments.drift[n - 1]) + n * Y.y(n)
            worst = max(worst, abs(remainder.value("R_n", n) - direct))
    return [_at_most(f"remainder_identity[ITE,N={N}]", worst, 1e-12)]


def appendix_checks(
    rng: RngStream,
    edge_sets: Sequence = APPENDIX_EDGE_SETS,
    N_values: Sequence[int] = (5, 7),
    decay_grid: Sequence[int] = (5, 7, 9, 11, 13),
    decay_budget: int = 4000,
) -> List[CheckResult]:
    """积分表示与精确枚举的 E[H_E]、奇数 k 的积分以及 |E[H_E]| 的衰减指数"""
    results = []
    for N in N_values:
        for edges in edge_sets:
            E = EdgeSet.of(*edges)
            exact = edge_product_expectation(N, E, mode="exact")
            integral = mckay_integral_expectation(N, E, rng=rng.child(f"appendix-{N}-{edges}"))
            gap = abs(exact.value - integral.value)
            results.append(
                _at_most(f"appendix[N={N},E={list(map(list, edges))}]", gap, max(3 * integral.stderr, 1e-6))
            )
        # 奇数条边：求积结果与对称性给出的0比较
        odd = mckay_integral_expectation(N, EdgeSet.of(*ODD_EDGE_SET), rng=rng.child(f"appendix-odd-{N}"))
        results.append(_at_most(f"appendix[odd_k,N={N}]", abs(odd.value), 3 * odd.stderr + 1e-9))

    fit = edge_product_decay_fit(decay_grid, EdgeSet.of(*DECAY_EDGE_SET), rng.child("appendix-decay"), decay_budget)
    results.append(_at_most(f"appendix[decay_exponent,N={list(decay_grid)}]", fit.exponent, DECAY_EXPONENT_LIMIT))
    return results


def _bump(x: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * np.sum(x ** 2, axis=-1) / 4)


def stein_suite(spec: OUSpec, rng: RngStream) -> Dict[str, Callable[[np.ndarray], np.ndarray]]:
    """E[Af(Z)] = 0 检验用的函数组，多项式系数取自 rng"""
    return {
        "linear": lambda x: x[..., 0],
        "square": lambda x: x[..., 1] ** 2,
        "product": lambda x: x[..., 0] * x[..., 1],
        "cubic": lambda x: x[..., 1] ** 3,
        "bump": _bump,
        "polynomial": random_polynomial(spec, rng, degree=4, indices=(2, 3)),
    }


def stein_checks(rng: RngStream, n_points: int = 20, samples: int = 20_000) -> List[CheckResult]:
    """Stein 方程的闭式解、高斯凸包残差、E[Af(Z)]=0 与常数校验"""
    spec = OUSpec(k_max=3)
    grid = QuadratureGrid.build(spec)
    points = rng.child("stein-points").normal(np.sqrt(spec.variances), size=(n_points, spec.dim))

    linear = max(stein_residual(lambda x: x[..., 0], X, spec, grid) for X in points[:3])
    square = max(stein_residual(lambda x: x[..., 1] ** 2, X, spec, grid) for X in points[:3])
    bump = max(stein_residual(_bump, X, spec, grid) for X in points)
    results = [
        _at_most("stein[closed_form,X_2]", linear, 1e-6),
        _at_most("stein[closed_form,X_3^2]", square, 1e-6),
        _at_most(f"stein[bump,{n_points}_points]", bump, 1e-3),
    ]
    suite = stein_suite(spec, rng.child("stein-polynomial"))
    results.extend(stein_lemma_mc(spec, suite, samples, rng.child("stein-mc")))
    for j in (1, 2, 3):
        check = time_integral_constant(j)
        results.append(_at_most(f"stein[time_integral,j={j}]", check.error, 1e-8))
    report = function_bound_check(_bump, 1, spec, points[:4], grid)
    results.append(CheckResult("stein[function_bound,j=1]", report.derivative_max, report.bound, report.holds))
    return results


def gauss_calibration_checks(rng: RngStream, samples: int = 2000, k_max: int = 4) -> List[CheckResult]:
    """精确高斯样本在1%水平通过所有诊断"""
    indices = list(range(2, k_max + 1))
    values = rng.child("gauss-synthetic").normal(np.sqrt(indices), size=(samples, len(indices)))
    report = gaussianity_from_array(values, indices)
    results = [CheckResult(f"gauss[ks,n={c.n}]", c.ks, c.ks_crit, c.ks < c.ks_crit) for c in report.components]
    off = report.covariance - np.diag(np.diag(report.covariance))
    worst = float(np.max(np.abs(off) / report.covariance_stderr))
    results.append(_at_most("gauss[covariance_offdiag_sigmas]", worst, 4.0))
    return results


def dynamics_scaling_checks(rng: RngStream, threads: int = 1) -> List[CheckResult]:
    """漂移余项的标度指数与扩散系数(长时间)"""
    results = []
    plans = (
        (Ensemble.ITE, [8, 12, 16, 24, 32], 30, -1.0),
        (Ensemble.RITE, [11, 15, 21, 31], 20, -0.5),
    )
    for ensemble, grid, samples, expected in plans:
        stream = rng.child(f"dynamics-{ensemble.value}")
        sweep = remainder_sweep(ensemble, grid, samples, stream, k_max=3, threads=threads)
        fit = fit_remainder_scaling(ensemble, "R_n", (2,), grid, samples, stream, k_max=3, sweep=sweep)
        results.append(
            CheckResult(f"dynamics[{ensemble.value},R_2_slope]", fit.exponent, expected, abs(fit.exponent - expected) <= 0.3)
        )
        largest = sweep.samples[grid[-1]]
        for n in (2, 3):
            diag = np.array([s.value("R_nm", n, n) for s in largest]) + 2 * n * n
            error = abs(float(np.mean(diag)) / (2 * n * n) - 1)
            results.append(_at_most(f"dynamics[{ensemble.value},diffusion_{n}{n},N={grid[-1]}]", error, 0.2))
        off = np.array([s.value("R_nm", 2, 3) for s in largest])
        stderr = float(np.std(off, ddof=1)) / math.sqrt(len(off))
        results.append(_at_most(f"dynamics[{ensemble.value},diffusion_23,N={grid[-1]}]", abs(float(np.mean(off))), 3 * stderr))
    return results


def convergence_checks(rng: RngStream, threads: int = 1) -> List[CheckResult]:
    """大 N 下的方差、偏度与 KS 趋势(长时间)"""
    results = []
    for ensemble in (Ensemble.ITE, Ensemble.RITE):
        sweep = convergence_sweep(
            ensemble, [21, 51, 101], 3000, 3, rng.child(f"convergence-{ensemble.value}"), threads=threads
        )
        last = sweep.diagnostics[-1]
        for n in (2, 3):
            c = last.component(n)
            ratio = c.var / n
            results.append(CheckResult(f"convergence[{ensemble.value},var_ratio_{n}]", ratio, 0.2, abs(ratio - 1) <= 0.2))
            results.append(_at_most(f"convergence[{ensemble.value},skew_{n}]", abs(c.skew), 0.2))
        trend = sweep.trends[2]
        results.append(CheckResult(f"convergence[{ensemble.value},ks_trend]", trend.p_value, 0.05, trend.decreasing))
    return results


def run_selftest(
    seed: int,
    level: str = "quick",
    threads: int = 1,
    long_running: bool = False,
    only: Optional[Sequence[str]] = None,
) -> SelftestReport:
    """运行自检

    Args:
        seed: 根种子
        level: quick 或 full
        threads: 线程数
        long_running: 是否包括 N=9 的正则锦标赛枚举
        only: 只运行这些分组(例如 ["census", "stein"])

    Returns:
        SelftestReport: 全部检验结果
    """
    if level not in LEVELS:
        raise PreconditionError(f"自检级别只支持 {', '.join(LEVELS)}: {level!r}")
    full = level == "full"
    rng = RngStream(seed)

    groups: Dict[str, Callable[[], List[CheckResult]]] = {
        "structural": lambda: structural_checks(rng.child("structural"), states=10_000 if full else 200),
        "census": lambda: census_checks(rng.child("census"), 1_000_000 if full else 100_000, long_running),
        "identity": lambda: identity_checks(
            rng.child("identity"), range(5, 11) if full else (5, 6, 7, 8), 20 if full else 3
        ),
        "lambda": lambda: lambda_checks(rng.child("lambda")),
        "indicator": lambda: indicator_checks(rng.child("indicator")),
        "stationarity": stationarity_checks,
        "remainder": lambda: remainder_identity_checks(rng.child("remainder")),
        "appendix": lambda: appendix_checks(
            rng.child("appendix"),
            decay_grid=tuple(range(5, 23, 2)) if full else (5, 7, 9, 11, 13),
            decay_budget=10_000 if full else 4000,
        ),
        "stein": lambda: stein_checks(rng.child("stein")),
        "gauss": lambda: gauss_calibration_checks(rng.child("gauss")),
    }
    if full:
        groups["dynamics"] = lambda: dynamics_scaling_checks(rng.child("dynamics"), threads)
        groups["convergence"] = lambda: convergence_checks(rng.child("convergence"), threads)

    report = SelftestReport(seed, level)
    for name, run in groups.items():
        if only and name not in only:
            continue
        logger.info(f"自检分组: {name}")
        checks = run()
        report.checks.extend(checks)
        failed = [c.name for c in checks if not c.passed]
        if failed:
            logger.warning(f"{name} 未通过: {failed}")
    logger.info(f"自检完成: {len(report.checks)} 项，{len(report.failures())} 项未通过")
    return report
