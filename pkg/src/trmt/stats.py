"""统计报告模块

中心化统计量的高斯性诊断与收敛趋势。
主要功能：
- 每个分量的矩、KS 距离以及协方差
- 按 N 网格扫描并做单调趋势检验
- 自相关与 KS 的小样本校验
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import stats

from .chebyshev import Scaling, TraceVector, build_calibration, centred_statistics
from .ensemble import Ensemble, sample_ensemble
from .exceptions import InvalidGridError, InvalidInputError
from .rng import RngStream

MIN_SAMPLES = 500
KS_CRITICAL_1PCT = 1.628


@dataclass(frozen=True)
class CheckResult:
    """一项数值检验的结果"""

    name: str
    statistic: float
    threshold: float
    passed: bool

    def to_json(self) -> Dict[str, object]:
        return {"name": self.name, "statistic": self.statistic, "threshold": self.threshold, "pass": self.passed}


def ks_critical(n: int) -> float:
    """1% 水平的渐近临界值 1.628/√n"""
    return KS_CRITICAL_1PCT / math.sqrt(n)


@dataclass(frozen=True)
class KSResult:
    distance: float
    p_value: float
    critical: float
    count: int


def ks_distance(sample: Sequence[float], variance: float) -> KSResult:
    """与 N(0, variance) 比较的单样本 KS 距离

    Raises:
        InvalidInputError: 样本为空或方差非正
    """
    values = np.asarray(sample, dtype=float)
    if values.size == 0:
        raise InvalidInputError("KS 检验需要至少一个样本")
    if variance <= 0:
        raise InvalidInputError(f"方差必须为正: {variance}")
    result = stats.kstest(values, "norm", args=(0.0, math.sqrt(variance)))
    return KSResult(float(result.statistic), float(result.pvalue), ks_critical(values.size), int(values.size))


def autocorrelation(series: Sequence[float], lag: int = 1) -> float:
    """滞后 lag 的样本自相关"""
    x = np.asarray(series, dtype=float)
    if lag < 1 or lag >= x.size:
        raise InvalidInputError(f"滞后必须在 1..{x.size - 1} 之间: {lag}")
    centred = x - x.mean()
    denominator = float(np.dot(centred, centred))
    if denominator == 0:
        return 0.0
    return float(np.dot(centred[:-lag], centred[lag:]) / denominator)


@dataclass(frozen=True)
class TrendResult:
    rho: float
    p_value: float

    @property
    def decreasing(self) -> bool:
        return self.p_value < 0.05

    def to_json(self) -> Dict[str, object]:
        return {"rho": self.rho, "p_value": self.p_value, "decreasing": self.decreasing}


def trend_test(x: Sequence[float], y: Sequence[float]) -> TrendResult:
    """Spearman 秩相关，单侧检验 y 随 x 递减"""
    if len(x) != len(y) or len(x) < 3:
        raise InvalidInputError("趋势检验至少需要3对数据")
    result = stats.spearmanr(x, y, alternative="less")
    rho = float(result.statistic) if hasattr(result, "statistic") else float(result.correlation)
    return TrendResult(rho, float(result.pvalue))


@dataclass(frozen=True)
class ComponentDiagnostics:
    n: int
    mean: float
    var: float
    skew: float
    kurt: float
    ks: float
    ks_crit: float


@dataclass
class GaussDiagnostics:
    """一组样本的高斯性诊断"""

    sample_count: int
    components: List[ComponentDiagnostics]
    covariance: np.ndarray
    covariance_stderr: np.ndarray
    ensemble: Optional[Ensemble] = None
    n_vertices: Optional[int] = None
    lag_one: Dict[int, float] = field(default_factory=dict)

    CSV_HEADER = ("ensemble", "N", "n", "mean", "var", "skew", "kurt", "ks", "ks_crit_1pct")

    def component(self, n: int) -> ComponentDiagnostics:
        for c in self.components:
            if c.n == n:
                return c
        raise InvalidInputError(f"诊断中没有分量 n={n}")

    def rows(self) -> List[Tuple[object, ...]]:
        ensemble = self.ensemble.value if self.ensemble else ""
        return [
            (ensemble, self.n_vertices or "", c.n, c.mean, c.var, c.skew, c.kurt, c.ks, c.ks_crit)
            for c in self.components
        ]


def gaussianity_from_array(
    values: np.ndarray,
    indices: Sequence[int],
    ensemble: Optional[Ensemble] = None,
    n_vertices: Optional[int] = None,
) -> GaussDiagnostics:
    """对样本矩阵 (样本数 × 分量数) 做诊断，第 j 列与 N(0, indices[j]) 比较

    Raises:
        InvalidInputError: 样本少于500或形状不一致
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != len(indices):
        raise InvalidInputError("样本矩阵的列数必须与分量数一致")
    count = values.shape[0]
    if count < MIN_SAMPLES:
        raise InvalidInputError(f"高斯性诊断至少需要{MIN_SAMPLES}个样本: {count}")

    components = []
    for column, n in zip(values.T, indices):
        ks = ks_distance(column, float(n))
        components.append(
            ComponentDiagnostics(
                n=int(n),
                mean=float(np.mean(column)),
                var=float(np.var(column, ddof=1)),
                skew=float(stats.skew(column)),
                kurt=float(stats.kurtosis(column)),
                ks=ks.distance,
                ks_crit=ks.critical,
            )
        )
    covariance = np.atleast_2d(np.cov(values, rowvar=False))
    variances = np.diag(covariance)
    covariance_stderr = np.sqrt(np.outer(variances, variances) / count)
    return GaussDiagnostics(count, components, covariance, covariance_stderr, ensemble, n_vertices)


def gaussianity_report(samples: Sequence[TraceVector]) -> GaussDiagnostics:
    """对一组 TraceVector 的 n>=2 分量做高斯性诊断

    Raises:
        InvalidInputError: 样本不足或来自不同的 (系综, N, 缩放)
    """
    if len(samples) < MIN_SAMPLES:
        raise InvalidInputError(f"高斯性诊断至少需要{MIN_SAMPLES}个样本: {len(samples)}")
    first = samples[0]
    key = (first.ensemble, first.n_vertices, first.scaling, first.k_max)
    if any((s.ensemble, s.n_vertices, s.scaling, s.k_max) != key for s in samples):
        raise InvalidInputError("所有样本必须来自相同的系综、维度、缩放和 k_max")
    if first.k_max < 2:
        raise InvalidInputError("至少需要 n=2 分量")
    indices = list(range(2, first.k_max + 1))
    values = np.array([[s.y(n) for n in indices] for s in samples])
    return gaussianity_from_array(values, indices, first.ensemble, first.n_vertices)


@dataclass
class ConvergenceSweep:
    ensemble: Ensemble
    N_grid: List[int]
    diagnostics: List[GaussDiagnostics]
    trends: Dict[int, TrendResult]

    def rows(self) -> List[Tuple[object, ...]]:
        return [row for d in self.diagnostics for row in d.rows()]

    def summary(self) -> Dict[str, object]:
        return {
            "ensemble": self.ensemble.value,
            "N_grid": self.N_grid,
            "trends": {str(n): t.to_json() for n, t in sorted(self.trends.items())},
            "lag_one": {str(d.n_vertices): {str(n): v for n, v in d.lag_one.items()} for d in self.diagnostics},
        }


def convergence_sweep(
    ensemble: Union[str, Ensemble],
    N_grid: Sequence[int],
    samples_per_N: int,
    k_max: int,
    rng: RngStream,
    scaling: Union[str, Scaling] = Scaling.THEOREM,
    calibration_budget: int = 10_000,
    threads: int = 1,
    gap: Optional[int] = None,
    burn_in_factor: float = 10.0,
) -> ConvergenceSweep:
    """按 N 网格生成诊断，并对 KS 距离做递减趋势检验

    Args:
        ensemble: ITE 或 RITE
        N_grid: 升序网格，至少3个点
        samples_per_N: 每个 N 的样本数
        k_max: 最大 n
        rng: 随机数流
        scaling: 缩放方式
        calibration_budget: 校准样本数
        gap: RITE 记录间隔，默认 d_N

    Raises:
        InvalidGridError: 网格少于3个点或不是升序
    """
    ensemble = Ensemble.parse(ensemble)
    grid = [int(N) for N in N_grid]
    if len(grid) < 3:
        raise InvalidGridError(f"收敛扫描至少需要3个网格点: {grid}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidGridError(f"网格必须严格升序: {grid}")

    diagnostics = []
    for N in grid:
        table = build_calibration(
            ensemble, N, k_max, calibration_budget, rng.child(f"calibration-{N}"), scaling, threads, burn_in_factor
        )
        states = sample_ensemble(ensemble, N, samples_per_N, rng.child(f"samples-{N}"), gap, burn_in_factor)
        vectors = [centred_statistics(H, table, k_max) for H in states]
        report = gaussianity_report(vectors)
        for n in range(2, k_max + 1):
            report.lag_one[n] = autocorrelation([v.y(n) for v in vectors], 1)
        diagnostics.append(report)
        logger.info(f"{ensemble.value} N={N}: KS(n=2)={report.component(2).ks:.4f}")

    trends = {
        n: trend_test(grid, [d.component(n).ks for d in diagnostics]) for n in range(2, k_max + 1)
    }
    return ConvergenceSweep(ensemble, grid, diagnostics, trends)
