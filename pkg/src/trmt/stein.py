"""Stein / OU 模块

多元 Ornstein-Uhlenbeck 生成元 A = Σ_n [n²∂²_n - nX_n∂_n]，
以及用 OU 半群数值求解 Stein 方程 Af = E[φ(Z)] - φ(X)。

泛函约定：φ 接受最后一维为坐标 (X_{k_min}, …, X_{k_max}) 的数组，
按前面的维度逐点求值。
"""

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import integrate, special, stats

from .exceptions import NumericalFailureError, PreconditionError
from .rng import RngStream
from .stats import CheckResult

Functional = Callable[[np.ndarray], np.ndarray]

MIN_HERMITE_ORDER = 20
TAIL_TOLERANCE = 1e-12


@dataclass(frozen=True)
class OUSpec:
    """坐标 n = k_min..k_max 的 OU 过程，速率为 n，平稳方差为 n"""

    k_max: int
    k_min: int = 2

    def __post_init__(self) -> None:
        if self.k_min < 1 or self.k_max < self.k_min:
            raise PreconditionError(f"坐标范围不合法: k_min={self.k_min}, k_max={self.k_max}")

    @property
    def rates(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1, dtype=float)

    @property
    def variances(self) -> np.ndarray:
        return self.rates

    @property
    def dim(self) -> int:
        return self.k_max - self.k_min + 1

    def coordinate(self, n: int) -> int:
        """指标 n 在坐标数组中的位置"""
        if not self.k_min <= n <= self.k_max:
            raise PreconditionError(f"指标 n={n} 不在 {self.k_min}..{self.k_max} 之内")
        return n - self.k_min


def gauss_hermite(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """标准正态测度下的 Gauss-Hermite 节点与权重"""
    knots, weights = np.polynomial.hermite.hermgauss(order)
    return knots * math.sqrt(2), weights / math.sqrt(math.pi)


def _tensor_nodes(spec: OUSpec, order: int) -> Tuple[np.ndarray, np.ndarray]:
    knots, weights = gauss_hermite(order)
    grids = np.meshgrid(*([knots] * spec.dim), indexing="ij")
    points = np.stack([g.reshape(-1) for g in grids], axis=-1) * np.sqrt(spec.variances)
    weight_grids = np.meshgrid(*([weights] * spec.dim), indexing="ij")
    w = np.ones(points.shape[0])
    for g in weight_grids:
        w = w * g.reshape(-1)
    return points, w


def gaussian_expectation(phi: Functional, spec: OUSpec, order: int = MIN_HERMITE_ORDER) -> float:
    """E[φ(Z)]，Z_n ~ N(0, n) 独立，张量 Gauss-Hermite"""
    points, weights = _tensor_nodes(spec, order)
    return float(np.dot(weights, phi(points)))


def _tanh_sinh(horizon: float, step: float) -> List[Tuple[float, float]]:
    """[0, horizon] 上的双指数节点"""
    count = int(math.ceil(3.5 / step))
    nodes = []
    for k in range(-count, count + 1):
        u = k * step
        inner = math.pi / 2 * math.sinh(u)
        x = math.tanh(inner)
        w = step * (math.pi / 2) * math.cosh(u) / math.cosh(inner) ** 2
        nodes.append((horizon * (1 + x) / 2, horizon * w / 2))
    return nodes


@dataclass(frozen=True)
class QuadratureGrid:
    """Stein 解的求积网格

    时间积分截断在 T，使 e^{-k_min·T} < 1e-12。
    """

    hermite_order: int
    time_nodes: Tuple[Tuple[float, float], ...]
    eval_points: Tuple[Tuple[float, ...], ...] = ()
    horizon: float = 0.0
    step: float = 0.125

    def __post_init__(self) -> None:
        if self.hermite_order < MIN_HERMITE_ORDER:
            raise PreconditionError(f"Hermite 阶数至少为{MIN_HERMITE_ORDER}: {self.hermite_order}")

    @classmethod
    def build(
        cls,
        spec: OUSpec,
        hermite_order: int = MIN_HERMITE_ORDER,
        step: float = 0.125,
        eval_points: Sequence[Sequence[float]] = (),
    ) -> "QuadratureGrid":
        horizon = math.log(1 / TAIL_TOLERANCE) / spec.k_min
        nodes = tuple(_tanh_sinh(horizon, step))
        return cls(hermite_order, nodes, tuple(tuple(float(x) for x in p) for p in eval_points), horizon, step)

    def refined(self) -> "QuadratureGrid":
        """时间步长减半的网格"""
        return QuadratureGrid(
            self.hermite_order, tuple(_tanh_sinh(self.horizon, self.step / 2)), self.eval_points, self.horizon, self.step / 2
        )


def _finite(value: float, where: str) -> float:
    if not math.isfinite(value):
        raise NumericalFailureError(f"{where} 得到非有限值", {"value": repr(value)})
    return value


def _step(X: np.ndarray, h: Optional[float]) -> float:
    return h if h is not None else 1e-3 * (1 + float(np.max(np.abs(X))))


def apply_generator(
    f: Callable[[np.ndarray], float], X: Sequence[float], spec: OUSpec, h: Optional[float] = None
) -> float:
    """中心差分(带 Richardson 外推)计算 Af(X) = Σ_n [n² f_nn - n X_n f_n]

    Raises:
        NumericalFailureError: f 出现非有限值
    """
    X = np.asarray(X, dtype=float)
    h = _step(X, h)
    rates = spec.rates
    f0 = _finite(float(f(X)), "f(X)")
    total = []
    for a in range(spec.dim):
        estimates = []
        for step in (h, h / 2):
            e = np.zeros(spec.dim)
            e[a] = step
            up = _finite(float(f(X + e)), "f(X+h)")
            down = _finite(float(f(X - e)), "f(X-h)")
            first = (up - down) / (2 * step)
            second = (up - 2 * f0 + down) / step ** 2
            estimates.append((first, second))
        first = (4 * estimates[1][0] - estimates[0][0]) / 3
        second = (4 * estimates[1][1] - estimates[0][1]) / 3
        total.append(rates[a] ** 2 * second - rates[a] * X[a] * first)
    return math.fsum(total)


def generator_values(phi: Functional, points: np.ndarray, spec: OUSpec, h: float = 1e-3) -> np.ndarray:
    """对一批点向量化地计算 Af，用于蒙特卡洛"""
    points = np.asarray(points, dtype=float)
    f0 = phi(points)
    result = np.zeros(points.shape[0])
    for a, rate in enumerate(spec.rates):
        e = np.zeros(spec.dim)
        e[a] = h
        up = phi(points + e)
        down = phi(points - e)
        result += rate ** 2 * (up - 2 * f0 + down) / h ** 2 - rate * points[:, a] * (up - down) / (2 * h)
    if not np.all(np.isfinite(result)):
        raise NumericalFailureError("生成元的取值出现非有限数", {"points": int(points.shape[0])})
    return result


def ou_transition_sample(
    X: Sequence[float], t: float, spec: OUSpec, rng: RngStream, size: Optional[int] = None
) -> np.ndarray:
    """X̃_n = X_n e^{-nt} + √(1-e^{-2nt})·Z_n，Z_n ~ N(0, n)

    Args:
        X: 起点
        t: 时间，不小于0
        spec: OU 参数
        rng: 随机数流
        size: 样本数，None 时返回单个点

    Raises:
        PreconditionError: t < 0
    """
    if t < 0:
        raise PreconditionError(f"时间不能为负: t={t}")
    X = np.asarray(X, dtype=float)
    rates = spec.rates
    shape = (spec.dim,) if size is None else (size, spec.dim)
    noise = rng.normal(np.sqrt(spec.variances), size=shape)
    return X * np.exp(-rates * t) + np.sqrt(1 - np.exp(-2 * rates * t)) * noise


def _semigroup_integral(phi: Functional, X: np.ndarray, spec: OUSpec, grid: QuadratureGrid, mean: float) -> float:
    points, weights = _tensor_nodes(spec, grid.hermite_order)
    unit = points / np.sqrt(spec.variances)
    rates = spec.rates
    total = []
    for t, w in grid.time_nodes:
        decay = np.exp(-rates * t)
        spread = np.sqrt(spec.variances * (1 - np.exp(-2 * rates * t)))
        moved = X * decay + unit * spread
        total.append(w * (float(np.dot(weights, phi(moved))) - mean))
    return math.fsum(total)


def solve_stein(
    phi: Functional,
    X: Sequence[float],
    spec: OUSpec,
    grid: QuadratureGrid,
    tol: float = 1e-8,
    check: bool = True,
    mean: Optional[float] = None,
) -> float:
    """用 OU 半群求解 Stein 方程

    f(X) = ∫₀^T dt (E_Z[φ(X̃(X, Z; t))] - E[φ(Z)])，
    满足 Af = E[φ(Z)] - φ(X)(相差一个常数)。

    Args:
        phi: 向量化泛函
        X: 求值点
        spec: OU 参数
        grid: 求积网格
        tol: 两次时间网格加密之间允许的差
        check: 是否做加密比较
        mean: 预先算好的 E[φ(Z)]

    Raises:
        NumericalFailureError: 加密前后结果差异超过 tol
    """
    X = np.asarray(X, dtype=float)
    if mean is None:
        mean = gaussian_expectation(phi, spec, grid.hermite_order)
    value = _semigroup_integral(phi, X, spec, grid, mean)
    if check:
        refined = _semigroup_integral(phi, X, spec, grid.refined(), mean)
        if abs(refined - value) > tol * max(1.0, abs(refined)):
            logger.error(f"Stein 解的时间积分不收敛: {value} vs {refined}")
            raise NumericalFailureError(
                "Stein 解的时间积分不收敛", {"coarse": value, "refined": refined, "tol": tol, "X": X.tolist()}
            )
        value = refined
    return _finite(value, "Stein 解")


def stein_residual(
    phi: Functional, X: Sequence[float], spec: OUSpec, grid: QuadratureGrid, h: Optional[float] = None
) -> float:
    """|Af(X) + φ(X) - E[φ(Z)]|，f 为数值解"""
    X = np.asarray(X, dtype=float)
    mean = gaussian_expectation(phi, spec, grid.hermite_order)
    solve_stein(phi, X, spec, grid, mean=mean)

    def f(point: np.ndarray) -> float:
        return solve_stein(phi, point, spec, grid, check=False, mean=mean)

    value = apply_generator(f, X, spec, h)
    return abs(value + float(phi(X[None, :])[0]) - mean)


@dataclass(frozen=True)
class PolynomialFunctional:
    """标准化坐标 X_n/√n 上的多项式，monomials 的每一项是坐标位置的多重集"""

    monomials: Tuple[Tuple[int, ...], ...]
    coefficients: Tuple[float, ...]
    scales: Tuple[float, ...]

    @property
    def degree(self) -> int:
        return max((len(m) for m in self.monomials), default=0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1])
        for monomial, c in zip(self.monomials, self.coefficients):
            term = np.full(x.shape[:-1], c)
            for axis in monomial:
                term = term * (x[..., axis] / self.scales[axis])
            total = total + term
        return total


def random_polynomial(
    spec: OUSpec, rng: RngStream, degree: int = 4, indices: Sequence[int] = (2, 3)
) -> PolynomialFunctional:
    """系数为标准正态的随机多项式，次数不超过 degree，只依赖 X_n (n ∈ indices)

    Raises:
        PreconditionError: 指标不在 spec 范围内或 degree 为负
    """
    if degree < 0:
        raise PreconditionError(f"多项式次数不能为负: {degree}")
    axes = [spec.coordinate(n) for n in indices]
    monomials: List[Tuple[int, ...]] = [()]
    for order in range(1, degree + 1):
        monomials.extend(combinations_with_replacement(axes, order))
    coefficients = rng.normal(1.0, size=len(monomials))
    scales = tuple(float(s) for s in np.sqrt(spec.variances))
    return PolynomialFunctional(tuple(monomials), tuple(float(c) for c in coefficients), scales)


def stein_lemma_mc(
    spec: OUSpec, f_suite: Dict[str, Functional], samples: int, rng: RngStream, h: float = 1e-3
) -> List[CheckResult]:
    """蒙特卡洛检验 E[Af(Z)] = 0

    每个函数用独立子流，统计量为样本均值，阈值为 3 倍标准误差。
    """
    results = []
    for name in sorted(f_suite):
        stream = rng.child(f"stein-{name}")
        Z = stream.normal(np.sqrt(spec.variances), size=(samples, spec.dim))
        values = generator_values(f_suite[name], Z, spec, h)
        mean = float(np.mean(values))
        threshold = 3 * float(np.std(values, ddof=1)) / math.sqrt(samples)
        # 确定性为0的情形(如线性函数)允许舍入误差
        threshold = max(threshold, 1e-9)
        results.append(CheckResult(f"stein_lemma[{name}]", mean, threshold, abs(mean) < threshold))
    return results


def function_bound_constant(j: int) -> float:
    """r_j = (1/√π)·2^{j-3}Γ(j/2)²/(j-1)!"""
    return 2.0 ** (j - 3) * special.gamma(j / 2) ** 2 / math.factorial(j - 1) / math.sqrt(math.pi)


def displayed_bound_constant(j: int, k: int) -> float:
    """引理陈述中的写法 (1/√π)·2^{j-3}Γ(k/2)²/(k-1)!"""
    return 2.0 ** (j - 3) * special.gamma(k / 2) ** 2 / math.factorial(k - 1) / math.sqrt(math.pi)


@dataclass(frozen=True)
class TimeIntegralCheck:
    j: int
    numeric: float
    closed_form: float
    error: float


def time_integral_constant(j: int) -> TimeIntegralCheck:
    """∫₀^∞ e^{-2jt}/√(1-e^{-4t}) dt 与 ½·2^{j-2}Γ(j/2)²/(j-1)! 比较"""
    if j < 1:
        raise PreconditionError(f"j 至少为1: {j}")
    numeric, _ = integrate.quad(lambda t: math.exp(-2 * j * t) / math.sqrt(-math.expm1(-4 * t)), 0, math.inf, limit=200)
    closed = 0.5 * 2.0 ** (j - 2) * special.gamma(j / 2) ** 2 / math.factorial(j - 1)
    return TimeIntegralCheck(j, float(numeric), float(closed), abs(float(numeric) - float(closed)))


def _partial(func: Callable[[np.ndarray], np.ndarray], points: np.ndarray, axes: Tuple[int, ...], h: float) -> np.ndarray:
    """嵌套中心差分求偏导 ∂_{axes}"""
    if not axes:
        return func(points)
    e = np.zeros(points.shape[-1])
    e[axes[0]] = h
    rest = axes[1:]
    return (_partial(func, points + e, rest, h) - _partial(func, points - e, rest, h)) / (2 * h)


def derivative_sup(func: Callable[[np.ndarray], np.ndarray], points: np.ndarray, order: int, h: float) -> float:
    """点集上全部 order 阶偏导绝对值的最大值"""
    points = np.atleast_2d(points)
    if order == 0:
        return float(np.max(np.abs(func(points))))
    dim = points.shape[-1]
    best = 0.0
    for axes in combinations_with_replacement(range(dim), order):
        best = max(best, float(np.max(np.abs(_partial(func, points, axes, h)))))
    return best


@dataclass(frozen=True)
class FunctionBoundReport:
    j: int
    derivative_max: float
    phi_norm: float
    constant: float
    displayed_constant: float
    bound: float
    holds: bool

    def to_json(self) -> Dict[str, object]:
        return {
            "j": self.j,
            "derivative_max": self.derivative_max,
            "phi_norm": self.phi_norm,
            "constant_j_form": self.constant,
            "constant_k_form": self.displayed_constant,
            "bound": self.bound,
            "pass": self.holds,
        }


def function_bound_check(
    phi: Functional,
    j: int,
    spec: OUSpec,
    sample_points: Sequence[Sequence[float]],
    grid: Optional[QuadratureGrid] = None,
    phi_norm: Optional[float] = None,
    h: float = 1e-2,
) -> FunctionBoundReport:
    """检查 ‖∇^j f‖ <= r_j‖∇^{j-1}φ‖ 在探测点上是否成立

    ‖∇^{j-1}φ‖ 未给出时，在探测点与 Hermite 节点的并集上估计。
    """
    if j not in (1, 2, 3):
        raise PreconditionError(f"j 只支持 1, 2, 3: {j}")
    grid = grid or QuadratureGrid.build(spec)
    points = np.atleast_2d(np.asarray(sample_points, dtype=float))
    mean = gaussian_expectation(phi, spec, grid.hermite_order)

    def f(batch: np.ndarray) -> np.ndarray:
        return np.array([solve_stein(phi, x, spec, grid, check=False, mean=mean) for x in np.atleast_2d(batch)])

    derivative_max = derivative_sup(f, points, j, h)
    if phi_norm is None:
        cloud, _ = _tensor_nodes(spec, 8)
        phi_norm = derivative_sup(phi, np.vstack([points, cloud]), j - 1, h)
    constant = function_bound_constant(j)
    bound = constant * phi_norm
    holds = derivative_max <= bound + 1e-6
    logger.debug(f"函数界 j={j}: 导数最大值={derivative_max:.6g}, 上界={bound:.6g}")
    return FunctionBoundReport(j, derivative_max, phi_norm, constant, displayed_bound_constant(j, spec.k_max), bound, holds)


def stationary_density(points: np.ndarray, spec: OUSpec) -> np.ndarray:
    """⊗N(0, n) 的密度"""
    points = np.atleast_2d(points)
    return np.prod(stats.norm.pdf(points, scale=np.sqrt(spec.variances)), axis=-1)


def apply_adjoint_generator(
    P: Callable[[np.ndarray], np.ndarray], X: Sequence[float], spec: OUSpec, h: float = 1e-4
) -> float:
    """前向 Fokker-Planck 算子 A*P = Σ_n n[∂_n(X_n P) + n∂²_n P]"""
    X = np.asarray(X, dtype=float)
    total = []
    p0 = float(P(X[None, :])[0])
    for a, rate in enumerate(spec.rates):
        e = np.zeros(spec.dim)
        e[a] = h
        up = float(P((X + e)[None, :])[0])
        down = float(P((X - e)[None, :])[0])
        flux = ((X[a] + h) * up - (X[a] - h) * down) / (2 * h)
        total.append(rate * (flux + rate * (up - 2 * p0 + down) / h ** 2))
    return _finite(math.fsum(total), "A*P")


def stationarity_check(spec: OUSpec, times: Sequence[float], samples: int, rng: RngStream) -> List[CheckResult]:
    """从平稳分布出发，经过时间 t 后二阶矩仍为 n"""
    results = []
    start = rng.child("stationary-start").normal(np.sqrt(spec.variances), size=(samples, spec.dim))
    for t in times:
        moved = ou_transition_sample(np.zeros(spec.dim), t, spec, rng.child(f"stationary-{t}"), size=samples)
        moved = moved + start * np.exp(-spec.rates * t)
        second = np.mean(moved ** 2, axis=0)
        stderr = np.std(moved ** 2, axis=0, ddof=1) / math.sqrt(samples)
        for a, n in enumerate(spec.rates):
            deviation = float(second[a] - n)
            results.append(CheckResult(f"stationary[t={t},n={int(n)}]", deviation, 3 * float(stderr[a]), bool(abs(deviation) < 3 * stderr[a])))
    return results


def semigroup_check(
    X: Sequence[float], s: float, t: float, spec: OUSpec, samples: int, rng: RngStream
) -> List[CheckResult]:
    """先走 s 再走 t 与直接走 s+t 的前两阶矩一致"""
    X = np.asarray(X, dtype=float)
    first = ou_transition_sample(X, s, spec, rng.child("semigroup-s"), size=samples)
    noise = ou_transition_sample(np.zeros(spec.dim), t, spec, rng.child("semigroup-t"), size=samples)
    composed = first * np.exp(-spec.rates * t) + noise
    direct = ou_transition_sample(X, s + t, spec, rng.child("semigroup-direct"), size=samples)
    results = []
    for a, n in enumerate(spec.rates):
        for label, transform in (("mean", lambda v: v), ("second", lambda v: v ** 2)):
            u, v = transform(composed[:, a]), transform(direct[:, a])
            diff = float(np.mean(u) - np.mean(v))
            stderr = math.sqrt(float(np.var(u, ddof=1) + np.var(v, ddof=1)) / samples)
            results.append(CheckResult(f"semigroup[{label},n={int(n)}]", diff, 3 * stderr, abs(diff) < 3 * stderr))
    return results
