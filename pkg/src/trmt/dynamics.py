"""链动力学模块

对一次马尔可夫链移动，精确计算统计量增量 δY 的条件矩，
提取漂移/扩散余项并拟合其随 N 的标度。
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import stats

from .chebyshev import CalibrationTable, Scaling, TraceVector, build_calibration, centred_statistics, eig_traces
from .ensemble import (
    Ensemble,
    TournamentMatrix,
    flip_edges,
    pair_count,
    regular_triangle_count,
    sample_ensemble,
)
from .exceptions import BudgetExceededError, InvalidGridError, ParityViolationError, PreconditionError
from .parallel import ordered_map
from .rng import RngStream

DEFAULT_MOMENT_BUDGET = 5_000_000_000
LABELLED_LISTINGS = 6

Functional = Callable[[TournamentMatrix], float]


def move_count(ensemble: Union[str, Ensemble], N: int) -> int:
    """d_N：ITE 为 N(N-1)/2，RITE 为 N(N-1)(N+1)/4"""
    ensemble = Ensemble.parse(ensemble)
    return pair_count(N) if ensemble is Ensemble.ITE else regular_triangle_count(N)


def normalizer(ensemble: Union[str, Ensemble], N: int) -> float:
    """ITE 为 d_N/4，RITE 为 d_N/(6N)"""
    ensemble = Ensemble.parse(ensemble)
    d = move_count(ensemble, N)
    return d / 4 if ensemble is Ensemble.ITE else d / (6 * N)


def _moves(H: TournamentMatrix, ensemble: Ensemble) -> Tuple[List[List[Tuple[int, int]]], np.ndarray]:
    """所有合法移动翻转的边以及每个移动的权重(总和为1)

    RITE 的每个有向三角形有 6 种带标号写法，翻转结果相同，合并计权。
    """
    N = H.n_vertices
    if ensemble is Ensemble.ITE:
        edges = [[(p, q)] for p in range(N) for q in range(p + 1, N)]
        return edges, np.full(len(edges), 1.0 / len(edges))

    S = H.signs
    triangles = []
    for a in range(N):
        for b in range(a + 1, N):
            for c in range(b + 1, N):
                if S[a, b] == S[b, c] == S[c, a]:
                    triangles.append([(a, b), (b, c), (c, a)])
    d = regular_triangle_count(N)
    return triangles, np.full(len(triangles), LABELLED_LISTINGS / d)


def _check_ensemble(H: TournamentMatrix, ensemble: Ensemble) -> None:
    if ensemble is Ensemble.RITE:
        if H.n_vertices % 2 == 0:
            raise ParityViolationError(f"正则锦标赛要求N为奇数: N={H.n_vertices}")
        if not H.is_regular():
            raise PreconditionError("RITE 动力学要求行和为0的矩阵")


def move_increments(
    H: TournamentMatrix, ensemble: Union[str, Ensemble], k_max: int, threads: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """每个移动的 δY (LEMMA 缩放，未中心化迹之差)

    Returns:
        (deltas, weights): deltas 形状 (移动数, k_max)，weights 为每个移动的概率
    """
    ensemble = Ensemble.parse(ensemble)
    _check_ensemble(H, ensemble)
    base = eig_traces(H, k_max, Scaling.LEMMA)
    moves, weights = _moves(H, ensemble)
    after = ordered_map(lambda edges: eig_traces(flip_edges(H, edges), k_max, Scaling.LEMMA), moves, threads)
    return np.array(after) - base, weights


@dataclass(frozen=True)
class DynamicsEstimate:
    """一步移动后 δY 的精确条件矩

    数组按 n-1 编号(n = 1..k_max)。
    """

    n_vertices: int
    ensemble: Ensemble
    k_max: int
    drift: np.ndarray
    diffusion: np.ndarray
    third_abs: np.ndarray
    normalizer: float
    moves: int


def exact_conditional_moments(
    H: TournamentMatrix,
    ensemble: Union[str, Ensemble],
    k_max: int,
    budget: int = DEFAULT_MOMENT_BUDGET,
    threads: int = 1,
) -> DynamicsEstimate:
    """对全部 d_N 个移动精确求和得到 E[δY_n|H]、E[δY_nδY_m|H]、E[|δY_nδY_mδY_l||H]

    Args:
        H: 系综中的矩阵
        ensemble: ITE 或 RITE
        k_max: 最大 n
        budget: d_N·N³ 工作量上限
        threads: 线程数

    Raises:
        BudgetExceededError: d_N·N³ 超出预算
    """
    ensemble = Ensemble.parse(ensemble)
    N = H.n_vertices
    cost = move_count(ensemble, N) * N ** 3
    if cost > budget:
        logger.error(f"精确矩的工作量 {cost} 超出预算 {budget}")
        raise BudgetExceededError(f"N={N} 的精确矩工作量 {cost} 超出预算 {budget}")

    deltas, weights = move_increments(H, ensemble, k_max, threads)
    drift = weights @ deltas
    diffusion = np.einsum("s,sn,sm->nm", weights, deltas, deltas)
    magnitude = np.abs(deltas)
    third_abs = np.einsum("s,sn,sm,sl->nml", weights, magnitude, magnitude, magnitude)
    return DynamicsEstimate(N, ensemble, k_max, drift, diffusion, third_abs, normalizer(ensemble, N), len(deltas))


@dataclass(frozen=True)
class RemainderSample:
    """扣除 -nY_n 与 2n²δ_nm 之后的余项"""

    R_n: np.ndarray
    R_nm: np.ndarray
    R_nml: np.ndarray

    def value(self, which: str, n: int, m: int = 0, l: int = 0) -> float:
        if which == "R_n":
            return float(self.R_n[n - 1])
        if which == "R_nm":
            return float(self.R_nm[n - 1, m - 1])
        if which == "R_nml":
            return float(self.R_nml[n - 1, m - 1, l - 1])
        raise PreconditionError(f"未知的余项: {which!r} (支持 R_n, R_nm, R_nml)")


def extract_remainders(d: DynamicsEstimate, Y: TraceVector) -> RemainderSample:
    """R_n = c·drift_n + nY_n，R_nm = c·diffusion_nm - 2n²δ_nm，R_nml = c·third_abs_nml"""
    if Y.k_max < d.k_max or Y.n_vertices != d.n_vertices:
        raise PreconditionError("统计量与条件矩必须来自同一矩阵和同样的 k_max")
    index = np.arange(1, d.k_max + 1, dtype=float)
    y = np.array(Y.values[: d.k_max])
    R_n = d.normalizer * d.drift + index * y
    R_nm = d.normalizer * d.diffusion - np.diag(2 * index ** 2)
    R_nml = d.normalizer * d.third_abs
    return RemainderSample(R_n, R_nm, R_nml)


@dataclass(frozen=True)
class ScalingFit:
    """log mean|R| 对 log N 的最小二乘拟合"""

    exponent: float
    intercept: float
    stderr: float
    N_grid: Tuple[int, ...]
    means: Tuple[float, ...]
    bootstrap_stderr: Optional[float] = None

    def to_json(self) -> Dict[str, object]:
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "bootstrap_stderr": self.bootstrap_stderr,
            "N_grid": list(self.N_grid),
            "means": list(self.means),
        }


def fit_scaling(
    N_grid: Sequence[int],
    values: Sequence[Sequence[float]],
    rng: Optional[RngStream] = None,
    bootstrap: int = 200,
) -> ScalingFit:
    """对每个 N 的 |R| 样本做对数-对数拟合

    Args:
        N_grid: 维度网格，至少4个点
        values: 每个 N 的样本值
        rng: 提供时用自助法估计斜率误差

    Raises:
        InvalidGridError: 网格点少于4个
    """
    if len(N_grid) < 4:
        raise InvalidGridError(f"标度拟合至少需要4个网格点: {list(N_grid)}")
    if len(values) != len(N_grid):
        raise InvalidGridError("样本组数与网格点数不一致")
    means = [float(np.mean(np.abs(v))) for v in values]
    if min(means) <= 0:
        raise InvalidGridError("平均余项必须为正才能取对数")
    x = np.log(np.asarray(N_grid, dtype=float))
    fit = stats.linregress(x, np.log(means))

    spread = None
    if rng is not None and bootstrap > 1:
        slopes = []
        for _ in range(bootstrap):
            resampled = []
            for v in values:
                v = np.abs(np.asarray(v, dtype=float))
                resampled.append(float(np.mean(v[rng.integers(0, len(v), size=len(v))])))
            if min(resampled) > 0:
                slopes.append(stats.linregress(x, np.log(resampled)).slope)
        spread = float(np.std(slopes, ddof=1)) if len(slopes) > 1 else None

    return ScalingFit(
        float(fit.slope), float(fit.intercept), float(fit.stderr),
        tuple(int(n) for n in N_grid), tuple(means), spread,
    )


@dataclass
class RemainderSweep:
    """标度扫描的原始数据"""

    ensemble: Ensemble
    k_max: int
    N_grid: List[int]
    samples: Dict[int, List[RemainderSample]] = field(default_factory=dict)


def remainder_sweep(
    ensemble: Union[str, Ensemble],
    N_grid: Sequence[int],
    samples_per_N: int,
    rng: RngStream,
    k_max: int = 3,
    calibration_budget: int = 20_000,
    budget: int = DEFAULT_MOMENT_BUDGET,
    threads: int = 1,
    burn_in_factor: float = 10.0,
) -> RemainderSweep:
    """在每个 N 上抽样并计算余项"""
    ensemble = Ensemble.parse(ensemble)
    if samples_per_N < 20:
        raise PreconditionError(f"每个N至少需要20个样本: {samples_per_N}")
    sweep = RemainderSweep(ensemble, k_max, list(N_grid))
    for N in N_grid:
        cost = move_count(ensemble, N) * N ** 3
        if cost > budget:
            raise BudgetExceededError(f"N={N} 的精确矩工作量 {cost} 超出预算 {budget}")
        table = build_calibration(
            ensemble, N, k_max, calibration_budget, rng.child(f"calibration-{N}"),
            Scaling.LEMMA, threads, burn_in_factor,
        )
        states = sample_ensemble(ensemble, N, samples_per_N, rng.child(f"states-{N}"), burn_in_factor=burn_in_factor)
        rows = []
        for H in states:
            moments = exact_conditional_moments(H, ensemble, k_max, budget, threads)
            rows.append(extract_remainders(moments, centred_statistics(H, table, k_max)))
        sweep.samples[N] = rows
        logger.info(f"{ensemble.value} N={N}: 完成 {len(rows)} 个样本的余项计算")
    return sweep


def fit_remainder_scaling(
    ensemble: Union[str, Ensemble],
    which: str,
    indices: Sequence[int],
    N_grid: Sequence[int],
    samples_per_N: int,
    rng: RngStream,
    k_max: Optional[int] = None,
    calibration_budget: int = 20_000,
    budget: int = DEFAULT_MOMENT_BUDGET,
    threads: int = 1,
    sweep: Optional[RemainderSweep] = None,
) -> ScalingFit:
    """拟合 mean|R| 随 N 的幂律指数

    Args:
        ensemble: ITE 或 RITE
        which: "R_n"、"R_nm" 或 "R_nml"
        indices: (n,)、(n, m) 或 (n, m, l)
        N_grid: 维度网格，至少4个点
        samples_per_N: 每个 N 的样本数，至少20
        rng: 随机数流
        sweep: 复用已有的扫描数据

    Raises:
        InvalidGridError: 网格点少于4个
    """
    if len(N_grid) < 4:
        raise InvalidGridError(f"标度拟合至少需要4个网格点: {list(N_grid)}")
    k_max = k_max or max(indices)
    if sweep is None:
        sweep = remainder_sweep(
            ensemble, N_grid, samples_per_N, rng, k_max, calibration_budget, budget, threads
        )
    values = [[s.value(which, *indices) for s in sweep.samples[N]] for N in N_grid]
    fit = fit_scaling(N_grid, values, rng.child(f"bootstrap-{which}"))
    logger.info(f"{which}{tuple(indices)} 的拟合指数: {fit.exponent:.3f} ± {fit.stderr:.3f}")
    return fit


def indicator_simplification_check(H: TournamentMatrix, f: Functional) -> float:
    """比较三角形指示函数求和与简化权重 (1+3S_{q0q1}S_{q1q2})/4 的求和

    两边都对有序互异三元组求和，简化形式对非三角形同样翻转三条边。

    Returns:
        float: |LHS - RHS|
    """
    N = H.n_vertices
    d = regular_triangle_count(N)
    S = H.signs
    base = f(H)
    cache: Dict[int, float] = {}

    def change(q0: int, q1: int, q2: int) -> float:
        flipped = flip_edges(H, [(q0, q1), (q1, q2), (q2, q0)])
        if flipped.bits not in cache:
            cache[flipped.bits] = f(flipped) - base
        return cache[flipped.bits]

    lhs: List[float] = []
    rhs: List[float] = []
    for q0 in range(N):
        for q1 in range(N):
            for q2 in range(N):
                if len({q0, q1, q2}) != 3:
                    continue
                delta = change(q0, q1, q2)
                s01, s12, s20 = int(S[q0, q1]), int(S[q1, q2]), int(S[q2, q0])
                if s01 == s12 == s20:
                    lhs.append(delta / d)
                rhs.append((1 + 3 * s01 * s12) / (4 * d) * delta)
    return abs(math.fsum(lhs) - math.fsum(rhs))


def _gradient_hessian(f: Callable[[np.ndarray], float], y: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    k = len(y)
    grad = np.zeros(k)
    hess = np.zeros((k, k))
    f0 = f(y)
    for a in range(k):
        e_a = np.zeros(k)
        e_a[a] = h
        grad[a] = (f(y + e_a) - f(y - e_a)) / (2 * h)
        hess[a, a] = (f(y + e_a) - 2 * f0 + f(y - e_a)) / h ** 2
        for b in range(a + 1, k):
            e_b = np.zeros(k)
            e_b[b] = h
            value = (f(y + e_a + e_b) - f(y + e_a - e_b) - f(y - e_a + e_b) + f(y - e_a - e_b)) / (4 * h * h)
            hess[a, b] = hess[b, a] = value
    return grad, hess


@dataclass(frozen=True)
class EvolutionGap:
    lhs: float
    rhs: float
    gap: float
    bound: float

    def to_json(self) -> Dict[str, float]:
        return {"lhs": self.lhs, "rhs": self.rhs, "gap": self.gap, "bound": self.bound}


def observable_evolution_gap(
    H: TournamentMatrix,
    ensemble: Union[str, Ensemble],
    f: Callable[[np.ndarray], float],
    table: CalibrationTable,
    k_max: int,
    third_derivative_bound: float,
    h: float = 1e-3,
    threads: int = 1,
) -> EvolutionGap:
    """c·E[δf|H] 与 Af(Y) + ΣR_n∂_nf + ½ΣR_nm∂²_nmf 的差

    f 作用在 (Y_2, …, Y_{k_max}) 上。差值是泰勒余项，
    不超过 (1/6)·sup|∂³f|·ΣR_nml。
    """
    ensemble = Ensemble.parse(ensemble)
    Y = centred_statistics(H, table, k_max)
    deltas, weights = move_increments(H, ensemble, k_max, threads)
    c = normalizer(ensemble, H.n_vertices)
    y = np.array(Y.values[1:])
    steps = deltas[:, 1:]

    lhs = c * math.fsum(float(w) * (f(y + step) - f(y)) for w, step in zip(weights, steps))

    drift = weights @ steps
    diffusion = np.einsum("s,sn,sm->nm", weights, steps, steps)
    magnitude = np.abs(steps)
    third = np.einsum("s,sn,sm,sl->nml", weights, magnitude, magnitude, magnitude)
    index = np.arange(2, k_max + 1, dtype=float)
    R_n = c * drift + index * y
    R_nm = c * diffusion - np.diag(2 * index ** 2)

    grad, hess = _gradient_hessian(f, y, h)
    generator = float(np.sum(index ** 2 * np.diag(hess)) - np.sum(index * y * grad))
    rhs = generator + float(R_n @ grad) + 0.5 * float(np.sum(R_nm * hess))
    bound = third_derivative_bound / 6 * c * float(third.sum())
    return EvolutionGap(lhs, rhs, abs(lhs - rhs), bound)
