"""切比雪夫谱统计模块

负责第一类切比雪夫多项式、基于特征值的迹统计量以及中心化统计量 Y_n。
主要功能：
- 精确整数系数 d^(n)_r (递推 + 闭式交叉校验)
- 特征值法 / 矩阵幂法计算 Tr T_m(H/σ)
- 校准表：每个 (系综, N, n) 的 E[Tr T_{2n}] 及其来源和误差
"""

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .ensemble import Ensemble, TournamentMatrix, sample_ensemble
from .exceptions import (
    CalibrationMissError,
    InvalidDegreeError,
    InvalidDimensionError,
    NumericalFailureError,
    PreconditionError,
)
from .parallel import ordered_map
from .rng import RngStream

MIN_MONTE_CARLO_BUDGET = 1000
CLOSED_FORM_LIMIT = 20


class Scaling(str, Enum):
    """矩阵缩放方式

    THEOREM 用 H/√(4N)，LEMMA 用 H/(2√(N-2))。
    """

    THEOREM = "theorem"
    LEMMA = "lemma"

    @classmethod
    def parse(cls, value: Union[str, "Scaling"]) -> "Scaling":
        if isinstance(value, Scaling):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise PreconditionError(f"未知的缩放方式: {value!r} (支持 theorem, lemma)")

    def sigma(self, n: int) -> float:
        if self is Scaling.THEOREM:
            return math.sqrt(4 * n)
        if n < 3:
            raise InvalidDimensionError(f"LEMMA 缩放要求N>=3: N={n}")
        return 2 * math.sqrt(n - 2)


@dataclass(frozen=True)
class ChebyshevCoeffs:
    """T_n(x) = Σ_r d_r x^{n-2r}, r = 0..⌊n/2⌋"""

    degree: int
    coeffs: Tuple[int, ...]

    def power_coefficients(self) -> List[int]:
        """按 x 的升幂排列的完整系数"""
        result = [0] * (self.degree + 1)
        for r, d in enumerate(self.coeffs):
            result[self.degree - 2 * r] = d
        return result

    def evaluate(self, x: float) -> float:
        return float(sum(d * x ** (self.degree - 2 * r) for r, d in enumerate(self.coeffs)))


def _closed_form_coeff(n: int, r: int) -> int:
    value = Fraction((-1) ** r * n, 2) * Fraction(
        math.factorial(n - r - 1), math.factorial(r) * math.factorial(n - 2 * r)
    ) * 2 ** (n - 2 * r)
    if value.denominator != 1:
        raise NumericalFailureError("闭式系数不是整数", {"n": n, "r": r, "value": str(value)})
    return int(value)


@lru_cache(maxsize=None)
def chebyshev_coeffs(n: int) -> ChebyshevCoeffs:
    """计算 T_n 的精确整数系数

    用三项递推 T_{k+1} = 2x T_k - T_{k-1} 得到系数，n<=20 时再与闭式比对。

    Args:
        n: 阶数，至少为1

    Returns:
        ChebyshevCoeffs: 系数表

    Raises:
        InvalidDegreeError: n <= 0
        NumericalFailureError: 递推与闭式不一致
    """
    if n <= 0:
        raise InvalidDegreeError(f"切比雪夫多项式阶数必须>=1: n={n}")

    previous, current = [1], [0, 1]
    for _ in range(1, n):
        following = [0] + [2 * c for c in current]
        for i, c in enumerate(previous):
            following[i] -= c
        previous, current = current, following

    coeffs = tuple(current[n - 2 * r] for r in range(n // 2 + 1))
    if n <= CLOSED_FORM_LIMIT:
        closed = tuple(_closed_form_coeff(n, r) for r in range(n // 2 + 1))
        if closed != coeffs:
            raise NumericalFailureError(
                "递推系数与闭式系数不一致", {"n": n, "recurrence": list(coeffs), "closed_form": list(closed)}
            )
    return ChebyshevCoeffs(n, coeffs)


def chebyshev_eval(n: int, x: Union[float, np.ndarray]) -> np.ndarray:
    """用三项递推计算 T_n(x)，对任意实数 x 有效"""
    x = np.asarray(x, dtype=float)
    if n < 0:
        raise InvalidDegreeError(f"阶数不能为负: n={n}")
    previous = np.ones_like(x)
    if n == 0:
        return previous
    current = x.copy()
    for _ in range(1, n):
        previous, current = current, 2 * x * current - previous
    return current


def _chebyshev_on_spectrum(eigenvalues: np.ndarray, m: int) -> float:
    inside = np.abs(eigenvalues) <= 1.0
    values = np.empty_like(eigenvalues)
    values[inside] = np.cos(m * np.arccos(np.clip(eigenvalues[inside], -1.0, 1.0)))
    values[~inside] = chebyshev_eval(m, eigenvalues[~inside])
    return math.fsum(values.tolist())


def scaled_eigenvalues(H: TournamentMatrix, scaling: Union[str, Scaling]) -> np.ndarray:
    """H/σ 的特征值(升序)

    Raises:
        NumericalFailureError: 特征值求解不收敛或结果非有限
    """
    scaling = Scaling.parse(scaling)
    sigma = scaling.sigma(H.n_vertices)
    try:
        eigenvalues = np.linalg.eigvalsh(H.hermitian / sigma)
    except np.linalg.LinAlgError as e:
        logger.error(f"特征值求解失败: {e}")
        raise NumericalFailureError(
            f"特征值求解失败: {e}", {"N": H.n_vertices, "scaling": scaling.value, "bits": H.to_json()["bits"]}
        )
    if not np.all(np.isfinite(eigenvalues)):
        raise NumericalFailureError("特征值不是有限数", {"N": H.n_vertices, "scaling": scaling.value})
    return eigenvalues


def spectral_traces(H: TournamentMatrix, degrees: Sequence[int], scaling: Union[str, Scaling]) -> np.ndarray:
    """任意阶数 m 的 Tr T_m(H/σ)，一次特征值分解"""
    eigenvalues = scaled_eigenvalues(H, scaling)
    return np.array([_chebyshev_on_spectrum(eigenvalues, m) for m in degrees])


def eig_traces(H: TournamentMatrix, k_max: int, scaling: Union[str, Scaling] = Scaling.LEMMA) -> np.ndarray:
    """未中心化的 Tr T_{2n}(H/σ)，n = 1..k_max

    Args:
        H: 锦标赛矩阵
        k_max: 最大 n
        scaling: 缩放方式

    Returns:
        np.ndarray: 长度 k_max，第 n-1 个元素为 Tr T_{2n}

    Raises:
        InvalidDegreeError: k_max < 1
    """
    if k_max < 1:
        raise InvalidDegreeError(f"k_max 必须>=1: {k_max}")
    return spectral_traces(H, [2 * n for n in range(1, k_max + 1)], scaling)


def power_traces(H: TournamentMatrix, k_max: int, scaling: Union[str, Scaling] = Scaling.LEMMA) -> np.ndarray:
    """用直接矩阵幂计算 Tr T_{2n} = Σ_r d^(2n)_r Tr((H/σ)^{2n-2r})"""
    if k_max < 1:
        raise InvalidDegreeError(f"k_max 必须>=1: {k_max}")
    scaling = Scaling.parse(scaling)
    M = H.hermitian / scaling.sigma(H.n_vertices)
    square = M @ M
    # moments[j] = Tr(M^{2j})
    moments = [float(H.n_vertices)]
    power = np.eye(H.n_vertices, dtype=complex)
    for _ in range(k_max):
        power = power @ square
        moments.append(float(np.trace(power).real))
    result = []
    for n in range(1, k_max + 1):
        coeffs = chebyshev_coeffs(2 * n).coeffs
        result.append(math.fsum(d * moments[n - r] for r, d in enumerate(coeffs)))
    return np.array(result)


@dataclass(frozen=True)
class TraceVector:
    """一个矩阵的中心化统计量 Y_1..Y_{k_max}

    报告时只使用 n>=2 (Tr T_2 是常数)。
    """

    k_max: int
    values: Tuple[float, ...]
    scaling: Scaling
    ensemble: Ensemble
    n_vertices: int

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in self.values):
            raise NumericalFailureError("统计量中出现非有限值", {"values": list(self.values)})

    def y(self, n: int) -> float:
        if not 1 <= n <= self.k_max:
            raise InvalidDegreeError(f"n 超出范围: {n}")
        return self.values[n - 1]

    def reported(self) -> Dict[int, float]:
        """n>=2 的分量"""
        return {n: self.values[n - 1] for n in range(2, self.k_max + 1)}

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


class CalibrationMethod(str, Enum):
    EXACT_ENUM = "EXACT_ENUM"
    MONTE_CARLO = "MONTE_CARLO"


@dataclass(frozen=True)
class CalibrationEntry:
    n: int
    mean: float
    stderr: float
    method: CalibrationMethod
    samples: int

    def to_json(self) -> Dict[str, object]:
        return {"n": self.n, "mean": self.mean, "stderr": self.stderr, "method": self.method.value, "samples": self.samples}


@dataclass
class CalibrationTable:
    """校准表：某个 (系综, N, 缩放) 下各 n 的 E[Tr T_{2n}]

    以 (seed, budget) 标记版本；JSON 往返逐位一致。
    """

    ensemble: Ensemble
    n_vertices: int
    scaling: Scaling
    seed: Optional[int] = None
    budget: Optional[int] = None
    entries: Dict[int, CalibrationEntry] = field(default_factory=dict)

    def get(self, n: int) -> CalibrationEntry:
        """取出第 n 项

        Raises:
            CalibrationMissError: 表中没有该项
        """
        if n not in self.entries:
            raise CalibrationMissError(
                f"校准表缺少条目: ensemble={self.ensemble.value}, N={self.n_vertices}, n={n}"
            )
        return self.entries[n]

    @property
    def k_max(self) -> int:
        return max(self.entries) if self.entries else 0

    def merge(self, other: "CalibrationTable") -> "CalibrationTable":
        """合并同一 (系综, N, 缩放) 的两张表，已有条目优先保留精确枚举结果"""
        if (other.ensemble, other.n_vertices, other.scaling) != (self.ensemble, self.n_vertices, self.scaling):
            raise PreconditionError("只能合并同一系综、维度和缩放的校准表")
        merged = dict(other.entries)
        for n, entry in self.entries.items():
            if n not in merged or entry.method is CalibrationMethod.EXACT_ENUM:
                merged[n] = entry
        return CalibrationTable(self.ensemble, self.n_vertices, self.scaling, self.seed, self.budget, merged)

    def to_json(self) -> Dict[str, object]:
        return {
            "ensemble": self.ensemble.value,
            "N": self.n_vertices,
            "scaling": self.scaling.value,
            "seed": self.seed,
            "budget": self.budget,
            "entries": [self.entries[n].to_json() for n in sorted(self.entries)],
        }

    @classmethod
    def from_json(cls, payload: Union[str, Dict[str, object]]) -> "CalibrationTable":
        data = json.loads(payload) if isinstance(payload, str) else payload
        entries = {}
        for item in data["entries"]:  # type: ignore[union-attr]
            entry = CalibrationEntry(
                int(item["n"]), float(item["mean"]), float(item["stderr"]),
                CalibrationMethod(item["method"]), int(item["samples"]),
            )
            entries[entry.n] = entry
        return cls(
            Ensemble.parse(str(data["ensemble"])),  # type: ignore[index]
            int(data["N"]),  # type: ignore[index]
            Scaling.parse(str(data.get("scaling", "lemma"))),  # type: ignore[union-attr]
            data.get("seed"),  # type: ignore[union-attr]
            data.get("budget"),  # type: ignore[union-attr]
            entries,
        )

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), sort_keys=True, indent=2), encoding="utf-8")
        logger.info(f"校准表已保存: {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CalibrationTable":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise CalibrationMissError(f"无法读取校准表: {e}")
        return cls.from_json(text)


def centred_statistics(H: TournamentMatrix, table: CalibrationTable, k_max: int) -> TraceVector:
    """Y_n = Tr T_{2n}(H/σ) - E[Tr T_{2n}]

    Raises:
        CalibrationMissError: 表与 H 的维度不符，或缺少某个 n
    """
    if table.n_vertices != H.n_vertices:
        raise CalibrationMissError(f"校准表维度 N={table.n_vertices} 与矩阵维度 N={H.n_vertices} 不符")
    means = [table.get(n).mean for n in range(1, k_max + 1)]
    traces = eig_traces(H, k_max, table.scaling)
    return TraceVector(
        k_max, tuple(float(t - m) for t, m in zip(traces, means)), table.scaling, table.ensemble, H.n_vertices
    )


def _column_summary(rows: np.ndarray) -> Tuple[List[float], List[float]]:
    means = [math.fsum(col.tolist()) / len(col) for col in rows.T]
    if len(rows) < 2:
        return means, [float("nan")] * rows.shape[1]
    stderrs = [float(np.std(col, ddof=1) / math.sqrt(len(col))) for col in rows.T]
    return means, stderrs


def build_calibration(
    ensemble: Union[str, Ensemble],
    N: int,
    k_max: int,
    budget: int,
    rng: RngStream,
    scaling: Union[str, Scaling] = Scaling.LEMMA,
    threads: int = 1,
    burn_in_factor: float = 10.0,
    exact: Optional[bool] = None,
) -> CalibrationTable:
    """构建校准表

    小 N (ITE N<=6, RITE N<=7) 用全枚举，否则用 budget 个去相关的蒙特卡洛样本。

    Args:
        ensemble: 系综
        N: 维度
        k_max: 最大 n
        budget: 蒙特卡洛样本数
        rng: 随机数流
        scaling: 缩放方式
        threads: 线程数
        exact: 强制选择路径，None 表示自动

    Returns:
        CalibrationTable: 校准表

    Raises:
        PreconditionError: 蒙特卡洛路径下 budget < 1000
    """
    from .oracle import enumerate_members, exact_feasible

    ensemble = Ensemble.parse(ensemble)
    scaling = Scaling.parse(scaling)
    if exact is None:
        exact = exact_feasible(ensemble, N)

    def traces(H: TournamentMatrix) -> np.ndarray:
        return eig_traces(H, k_max, scaling)

    if exact:
        members = list(enumerate_members(ensemble, N))
        logger.info(f"精确枚举校准: {ensemble.value} N={N}, 共 {len(members)} 个矩阵")
        rows = np.array(ordered_map(traces, members, threads))
        means = [math.fsum(col.tolist()) / len(members) for col in rows.T]
        entries = {
            n: CalibrationEntry(n, means[n - 1], 0.0, CalibrationMethod.EXACT_ENUM, len(members))
            for n in range(1, k_max + 1)
        }
        return CalibrationTable(ensemble, N, scaling, rng.seed, budget, entries)

    if budget < MIN_MONTE_CARLO_BUDGET:
        raise PreconditionError(f"蒙特卡洛校准的样本数至少为{MIN_MONTE_CARLO_BUDGET}: budget={budget}")
    logger.info(f"蒙特卡洛校准: {ensemble.value} N={N}, 样本数={budget}")
    samples = sample_ensemble(ensemble, N, budget, rng.child("calibration"), burn_in_factor=burn_in_factor)
    rows = np.array(ordered_map(traces, samples, threads))
    means, stderrs = _column_summary(rows)
    entries = {
        n: CalibrationEntry(n, means[n - 1], stderrs[n - 1], CalibrationMethod.MONTE_CARLO, budget)
        for n in range(1, k_max + 1)
    }
    return CalibrationTable(ensemble, N, scaling, rng.seed, budget, entries)
