"""小 N 精确预言模块

负责小维度下的穷举与精确期望。
主要功能：
- ITE 全枚举与正则锦标赛的剪枝回溯枚举(带磁盘缓存)
- 系综上的精确期望与边乘积期望 E[H_E]
- McKay 渐近计数公式及其积分表示的数值求积
- 马尔可夫链访问状态的普查与均匀性检验
"""

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from loguru import logger
from scipy import stats
from scipy.stats import qmc

from .ensemble import (
    Ensemble,
    TournamentChain,
    TournamentMatrix,
    default_burn_in,
    pair_count,
    pair_index,
    regular_triangle_count,
    sample_ensemble,
    seed_regular,
)
from .exceptions import (
    BudgetExceededError,
    InvalidDimensionError,
    InvalidGridError,
    NumericalFailureError,
    ParityViolationError,
    PreconditionError,
)
from .parallel import ordered_map
from .rng import RngStream

ITE_ENUM_LIMIT = 6
RITE_ENUM_LIMIT = 7
RITE_LONG_RUNNING_LIMIT = 9

# 已知的正则锦标赛个数，仅用于校验缓存
REGULAR_COUNTS: Dict[int, int] = {3: 2, 5: 24, 7: 2640, 9: 3230080}


def exact_feasible(ensemble: Union[str, Ensemble], N: int) -> bool:
    """是否可以在默认预算内全枚举(ITE N<=6, RITE 奇数 N<=7)"""
    ensemble = Ensemble.parse(ensemble)
    if ensemble is Ensemble.ITE:
        return 2 <= N <= ITE_ENUM_LIMIT
    return N % 2 == 1 and 3 <= N <= RITE_ENUM_LIMIT


@dataclass(frozen=True)
class EnsembleCensus:
    """系综普查：成员个数以及(可选的)全部成员的上三角比特掩码"""

    n_vertices: int
    ensemble: Ensemble
    count: int
    masks: Optional[np.ndarray] = None

    def __iter__(self) -> Iterator[TournamentMatrix]:
        if self.masks is None:
            for bits in range(self.count):
                yield TournamentMatrix(self.n_vertices, bits)
        else:
            for bits in self.masks.tolist():
                yield TournamentMatrix(self.n_vertices, int(bits))

    def __len__(self) -> int:
        return self.count


def enumerate_ite(N: int, limit: int = ITE_ENUM_LIMIT) -> EnsembleCensus:
    """全部 2^{N(N-1)/2} 个锦标赛

    Raises:
        InvalidDimensionError: N < 2
        BudgetExceededError: N 超过 limit
    """
    if N < 2:
        raise InvalidDimensionError(f"矩阵维度至少为2: N={N}")
    if N > limit:
        raise BudgetExceededError(f"ITE 全枚举只支持 N<={limit}: N={N}")
    return EnsembleCensus(N, Ensemble.ITE, 2 ** pair_count(N))


def _extend_rows(N: int, p: int, plus: List[int], minus: List[int], bits: int, out: List[int]) -> None:
    half = (N - 1) // 2
    if p == N - 1:
        if plus[p] == half:
            out.append(bits)
        return
    rest = range(p + 1, N)
    need = half - plus[p]
    if need < 0 or need > len(rest):
        return
    for chosen in combinations(rest, need):
        picked = set(chosen)
        mask = 0
        ok = True
        for q in rest:
            if q in picked:
                # S_pq = +1 使 S_qp = -1
                minus[q] += 1
                mask |= 1 << pair_index(N, p, q)
            else:
                plus[q] += 1
            if plus[q] > half or minus[q] > half:
                ok = False
        if ok:
            _extend_rows(N, p + 1, plus, minus, bits | mask, out)
        for q in rest:
            if q in picked:
                minus[q] -= 1
            else:
                plus[q] -= 1


def _first_row_subtree(N: int, chosen: Tuple[int, ...]) -> List[int]:
    plus = [0] * N
    minus = [0] * N
    plus[0] = len(chosen)
    mask = 0
    for q in range(1, N):
        if q in chosen:
            minus[q] += 1
            mask |= 1 << pair_index(N, 0, q)
        else:
            plus[q] += 1
    out: List[int] = []
    _extend_rows(N, 1, plus, minus, mask, out)
    return out


def _regular_masks(N: int, threads: int = 1) -> np.ndarray:
    half = (N - 1) // 2
    first_rows = list(combinations(range(1, N), half))
    subtrees = ordered_map(lambda c: _first_row_subtree(N, c), first_rows, threads)
    flat = [bits for tree in subtrees for bits in tree]
    return np.array(flat, dtype=np.uint64)


def _census_paths(cache_dir: Path, ensemble: Ensemble, N: int) -> Tuple[Path, Path]:
    stem = f"{ensemble.value.lower()}-{N}"
    return cache_dir / f"{stem}.bin", cache_dir / f"{stem}.json"


def save_census(cache_dir: Union[str, Path], census: EnsembleCensus) -> Path:
    """把普查写入缓存：打包掩码文件 + JSON 清单 {N, count, checksum}"""
    if census.masks is None:
        raise PreconditionError("只有带掩码的普查才能缓存")
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    data_path, manifest_path = _census_paths(cache_dir, census.ensemble, census.n_vertices)
    payload = census.masks.astype("<u8").tobytes()
    data_path.write_bytes(payload)
    manifest = {
        "N": census.n_vertices,
        "ensemble": census.ensemble.value,
        "count": census.count,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")
    logger.info(f"普查已缓存: {data_path}")
    return data_path


def load_census(cache_dir: Union[str, Path], ensemble: Union[str, Ensemble], N: int) -> Optional[EnsembleCensus]:
    """读取缓存；文件缺失或校验和不符时返回 None"""
    ensemble = Ensemble.parse(ensemble)
    data_path, manifest_path = _census_paths(Path(cache_dir), ensemble, N)
    if not data_path.exists() or not manifest_path.exists():
        return None
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        payload = data_path.read_bytes()
    except (OSError, json.JSONDecodeError) as e:
        logger.warning(f"普查缓存不可读，将重新枚举: {e}")
        return None
    if manifest.get("checksum") != hashlib.sha256(payload).hexdigest():
        logger.warning(f"普查缓存校验和不符，将重新枚举: {data_path}")
        return None
    masks = np.frombuffer(payload, dtype="<u8").astype(np.uint64)
    if len(masks) != manifest.get("count"):
        logger.warning("普查缓存计数与清单不符，将重新枚举")
        return None
    logger.debug(f"使用普查缓存: {data_path}")
    return EnsembleCensus(N, ensemble, len(masks), masks)


def enumerate_regular(
    N: int,
    long_running: bool = False,
    cache_dir: Optional[Union[str, Path]] = None,
    threads: int = 1,
) -> EnsembleCensus:
    """正则锦标赛的剪枝回溯枚举

    按行给上三角赋符号，部分行和超过 (N-1)/2 时剪枝。
    N=9 需要 long_running。

    Args:
        N: 奇数维度
        long_running: 是否允许 N=9
        cache_dir: 普查缓存目录，None 表示不使用缓存
        threads: 按第一行的取法分子树并行

    Returns:
        EnsembleCensus: 带全部成员掩码的普查

    Raises:
        ParityViolationError: N 为偶数
        BudgetExceededError: N 超出允许范围
    """
    if N % 2 == 0:
        raise ParityViolationError(f"正则锦标赛要求N为奇数: N={N}")
    if N < 3:
        raise InvalidDimensionError(f"正则锦标赛要求N>=3: N={N}")
    limit = RITE_LONG_RUNNING_LIMIT if long_running else RITE_ENUM_LIMIT
    if N > limit:
        raise BudgetExceededError(f"正则锦标赛枚举只支持 N<={limit}: N={N}")

    if cache_dir is not None:
        cached = load_census(cache_dir, Ensemble.RITE, N)
        if cached is not None:
            return cached

    logger.info(f"枚举正则锦标赛: N={N}")
    masks = _regular_masks(N, threads)
    census = EnsembleCensus(N, Ensemble.RITE, len(masks), masks)
    logger.info(f"N={N} 的正则锦标赛共 {census.count} 个")
    if cache_dir is not None:
        save_census(cache_dir, census)
    return census


def enumerate_members(ensemble: Union[str, Ensemble], N: int) -> EnsembleCensus:
    """默认预算内的全枚举

    Raises:
        BudgetExceededError: 超出全枚举范围
    """
    ensemble = Ensemble.parse(ensemble)
    if not exact_feasible(ensemble, N):
        if ensemble is Ensemble.RITE and N % 2 == 0:
            raise ParityViolationError(f"正则锦标赛要求N为奇数: N={N}")
        raise BudgetExceededError(f"{ensemble.value} N={N} 超出全枚举范围")
    if ensemble is Ensemble.ITE:
        return enumerate_ite(N)
    return enumerate_regular(N)


def _average(values: Sequence[Union[float, complex]]) -> Union[float, complex]:
    count = len(values)
    if all(not isinstance(v, complex) for v in values):
        return math.fsum(float(v) for v in values) / count
    real = math.fsum(complex(v).real for v in values) / count
    imag = math.fsum(complex(v).imag for v in values) / count
    return complex(real, imag)


def exact_expectation(
    ensemble: Union[str, Ensemble],
    N: int,
    g: Callable[[TournamentMatrix], Union[float, complex]],
    threads: int = 1,
) -> Union[float, complex]:
    """系综上 g(H) 的精确平均

    Raises:
        BudgetExceededError: 超出全枚举范围
    """
    members = list(enumerate_members(ensemble, N))
    values = ordered_map(g, members, threads)
    return _average(values)


@dataclass(frozen=True)
class EdgeSet:
    """有序边 (p, q) 的集合，作为无序对两两不同"""

    edges: Tuple[Tuple[int, int], ...]

    def __post_init__(self) -> None:
        seen = set()
        for p, q in self.edges:
            if p == q:
                raise PreconditionError(f"边的两个端点必须不同: ({p}, {q})")
            key = (min(p, q), max(p, q))
            if key in seen:
                raise PreconditionError(f"边重复: ({p}, {q})")
            seen.add(key)

    @classmethod
    def of(cls, *edges: Tuple[int, int]) -> "EdgeSet":
        return cls(tuple((int(p), int(q)) for p, q in edges))

    @property
    def k(self) -> int:
        return len(self.edges)

    def max_vertex(self) -> int:
        return max((max(e) for e in self.edges), default=-1)

    def sign_product(self, H: TournamentMatrix) -> int:
        result = 1
        for p, q in self.edges:
            result *= H.sign(p, q)
        return result

    def product(self, H: TournamentMatrix) -> complex:
        """H_E = ∏ H_pq = i^k ∏ S_pq"""
        return (1j ** self.k) * self.sign_product(H)


@dataclass(frozen=True)
class Estimate:
    """带误差棒的数值结果"""

    value: complex
    stderr: float
    method: str
    samples: int

    def to_json(self) -> Dict[str, object]:
        return {
            "re": self.value.real,
            "im": self.value.imag,
            "stderr": self.stderr,
            "method": self.method,
            "samples": self.samples,
        }


def _check_edges(N: int, E: EdgeSet) -> None:
    if E.max_vertex() >= N:
        raise PreconditionError(f"边集的顶点超出范围: N={N}, E={E.edges}")


def edge_product_expectation(
    N: int,
    E: EdgeSet,
    mode: str = "exact",
    budget: int = 10_000,
    rng: Optional[RngStream] = None,
    gap: Optional[int] = None,
    burn_in_factor: float = 10.0,
) -> Estimate:
    """RITE 上的 E[H_E]

    Args:
        N: 奇数维度
        E: 边集
        mode: "exact" 全枚举，"mc" 使用去相关的链样本
        budget: MC 样本数
        rng: MC 随机数流

    Returns:
        Estimate: 期望值与误差

    Raises:
        BudgetExceededError: exact 模式超出枚举范围
        PreconditionError: 顶点越界或缺少随机数流
    """
    _check_edges(N, E)
    mode = mode.lower()
    if mode == "exact":
        census = enumerate_members(Ensemble.RITE, N)
        value = _average([E.product(H) for H in census])
        return Estimate(complex(value), 0.0, "EXACT_ENUM", census.count)
    if mode != "mc":
        raise PreconditionError(f"未知的模式: {mode!r} (支持 exact, mc)")
    if rng is None:
        raise PreconditionError("MC 模式需要随机数流")

    samples = sample_ensemble(Ensemble.RITE, N, budget, rng, gap=gap, burn_in_factor=burn_in_factor)
    signs = np.array([E.sign_product(H) for H in samples], dtype=float)
    phase = 1j ** E.k
    mean = phase * float(np.mean(signs))
    stderr = float(np.std(signs, ddof=1) / math.sqrt(len(signs))) if len(signs) > 1 else float("nan")
    return Estimate(complex(mean), stderr, "MONTE_CARLO", len(samples))


@dataclass(frozen=True)
class DecayFit:
    """log|E[H_E]| 对 log N 的拟合"""

    edges: Tuple[Tuple[int, int], ...]
    exponent: float
    intercept: float
    stderr: float
    estimates: Tuple[Tuple[int, Estimate], ...]

    def to_json(self) -> Dict[str, object]:
        return {
            "edges": [list(e) for e in self.edges],
            "exponent": self.exponent,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "points": [dict(N=N, **estimate.to_json()) for N, estimate in self.estimates],
        }


def edge_product_decay_fit(
    N_grid: Sequence[int],
    E: EdgeSet,
    rng: RngStream,
    budget: int = 10_000,
    gap: Optional[int] = None,
    burn_in_factor: float = 10.0,
) -> DecayFit:
    """固定边集 E，拟合 |E[H_E]| 随 N 的衰减指数

    N<=7 用全枚举，更大的 N 用链样本的蒙特卡洛估计。

    Args:
        N_grid: 奇数维度网格，至少2个点
        E: 边集
        rng: 蒙特卡洛随机数流，每个 N 使用独立子流
        budget: 每个 N 的蒙特卡洛样本数
        gap: RITE 链的记录间隔

    Raises:
        InvalidGridError: 网格点少于2个
        NumericalFailureError: 某个 N 的估计值为0，无法取对数
    """
    grid = sorted(int(N) for N in N_grid)
    if len(grid) < 2:
        raise InvalidGridError(f"衰减拟合至少需要2个网格点: {list(N_grid)}")
    estimates = []
    for N in grid:
        if exact_feasible(Ensemble.RITE, N):
            estimate = edge_product_expectation(N, E, mode="exact")
        else:
            estimate = edge_product_expectation(
                N, E, mode="mc", budget=budget, rng=rng.child(f"decay-{N}"), gap=gap, burn_in_factor=burn_in_factor
            )
        logger.debug(f"N={N}: |E[H_E]|={abs(estimate.value)}, 方法={estimate.method}")
        estimates.append((N, estimate))

    magnitudes = [abs(estimate.value) for _, estimate in estimates]
    if min(magnitudes) <= 0:
        raise NumericalFailureError(
            "边乘积期望为0，无法做对数拟合",
            {"edges": [list(e) for e in E.edges], "N_grid": grid, "magnitudes": magnitudes},
        )
    fit = stats.linregress(np.log(grid), np.log(magnitudes))
    logger.info(f"E[H_E] 衰减指数: {fit.slope:.3f} (N={grid})")
    return DecayFit(E.edges, float(fit.slope), float(fit.intercept), float(fit.stderr), tuple(estimates))


def mckay_log(N: int) -> float:
    """McKay 渐近公式的自然对数"""
    if N % 2 == 0:
        raise ParityViolationError(f"正则锦标赛要求N为奇数: N={N}")
    if N < 3:
        raise InvalidDimensionError(f"正则锦标赛要求N>=3: N={N}")
    return (
        (N * N - 1) / 2 * math.log(2)
        - 0.5
        - (N - 1) / 2 * math.log(math.pi)
        - (N / 2 - 1) * math.log(N)
    )


def mckay_asymptotic(N: int) -> float:
    """|R_N| ≈ 2^{(N²-1)/2} e^{-1/2} / (π^{(N-1)/2} N^{N/2-1})，在对数空间计算"""
    return math.exp(mckay_log(N))


def mckay_ratios(N_values: Sequence[int], long_running: bool = False, cache_dir: Optional[Path] = None) -> List[Dict[str, object]]:
    """各 N 下公式值与精确计数之比"""
    rows = []
    for N in N_values:
        exact = enumerate_regular(N, long_running=long_running, cache_dir=cache_dir).count
        formula = mckay_asymptotic(N)
        rows.append({"N": N, "exact": exact, "formula": formula, "ratio": formula / exact})
    return rows


def _integrand(theta: np.ndarray, N: int, E: EdgeSet) -> np.ndarray:
    """∏_E sin(θ_a-θ_b) · ∏_{E^c} cos(θ_p-θ_q)，theta 形状 (点数, N)"""
    sine_pairs: Dict[Tuple[int, int], int] = {}
    for a, b in E.edges:
        sine_pairs[(min(a, b), max(a, b))] = 1 if a < b else -1
    result = np.ones(theta.shape[0])
    for p in range(N):
        for q in range(p + 1, N):
            diff = theta[:, p] - theta[:, q]
            orientation = sine_pairs.get((p, q))
            if orientation is None:
                result *= np.cos(diff)
            else:
                result *= orientation * np.sin(diff)
    return result


def _tensor_mean(N: int, E: EdgeSet, order: int) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes = nodes * math.pi / 2
    weights = weights / 2  # 平均值权重，总和为1
    if N == 1:
        return float(np.dot(weights, _integrand(nodes[:, None], N, E)))
    inner = np.stack(np.meshgrid(*([nodes] * (N - 1)), indexing="ij"), axis=-1).reshape(-1, N - 1)
    inner_w = np.ones(len(inner))
    for w in np.meshgrid(*([weights] * (N - 1)), indexing="ij"):
        inner_w = inner_w * w.reshape(-1)
    total = []
    for node, weight in zip(nodes, weights):
        theta = np.column_stack([np.full(len(inner), node), inner])
        total.append(weight * float(np.dot(inner_w, _integrand(theta, N, E))))
    return math.fsum(total)


def mckay_integral_expectation(
    N: int,
    E: EdgeSet,
    mc_points: int = 2 ** 16,
    rng: Optional[RngStream] = None,
    order: int = 16,
    replicas: int = 8,
    tolerance: float = 0.05,
    regular_count: Optional[int] = None,
) -> Estimate:
    """用积分表示计算 RITE 上的 E[H_E]

    E[H_E] = 2^{N(N-1)/2} (-1)^k I / (π^N |R_N|)，
    I 为 [-π/2, π/2]^N 上 ∏_E sin ∏_{E^c} cos 的积分。
    N<=5 用张量 Gauss-Legendre，N=7 用加扰 Sobol 点的随机化拟蒙特卡洛。
    k 为奇数时积分在 θ → -θ 下变号，数值结果应在误差范围内为0。

    Args:
        N: 奇数维度，不超过7
        E: 边集
        mc_points: 拟蒙特卡洛总点数
        rng: 加扰用的随机数流
        order: 每维 Gauss-Legendre 节点数
        replicas: 独立加扰次数(用于误差估计)
        tolerance: 允许的最大标准误差
        regular_count: |R_N|，None 时查表或枚举

    Returns:
        Estimate: 期望值与误差

    Raises:
        NumericalFailureError: 标准误差超过 tolerance
    """
    if N % 2 == 0:
        raise ParityViolationError(f"正则锦标赛要求N为奇数: N={N}")
    if N < 3 or N > RITE_ENUM_LIMIT:
        raise PreconditionError(f"积分表示只支持 3<=N<={RITE_ENUM_LIMIT}: N={N}")
    _check_edges(N, E)
    count = regular_count or REGULAR_COUNTS.get(N) or enumerate_regular(N).count
    scale = 2.0 ** pair_count(N) * (-1) ** E.k / count

    if N <= 5:
        coarse = _tensor_mean(N, E, order)
        fine = _tensor_mean(N, E, order + 4)
        value = scale * fine
        stderr = abs(scale * (fine - coarse))
        method, points = "GAUSS_LEGENDRE", (order + 4) ** N
    else:
        if rng is None:
            raise PreconditionError("拟蒙特卡洛需要随机数流")
        per_replica = max(1, int(math.log2(max(2, mc_points // replicas))))
        means = []
        for stream in rng.spawn(replicas):
            sampler = qmc.Sobol(d=N, scramble=True, seed=stream.generator)
            unit = sampler.random_base2(m=per_replica)
            theta = (unit - 0.5) * math.pi
            means.append(float(np.mean(_integrand(theta, N, E))))
        value = scale * float(np.mean(means))
        stderr = abs(scale) * float(np.std(means, ddof=1) / math.sqrt(replicas))
        method, points = "SOBOL", replicas * 2 ** per_replica

    logger.debug(f"积分表示: N={N}, k={E.k}, 值={value}, 误差={stderr}, 方法={method}")
    if not math.isfinite(value) or stderr > tolerance:
        raise NumericalFailureError(
            "积分估计的误差超过容许值",
            {"N": N, "edges": [list(e) for e in E.edges], "value": value, "stderr": stderr, "tolerance": tolerance},
        )
    return Estimate(complex(value), stderr, method, points)


@dataclass(frozen=True)
class ChainCensus:
    """链访问状态的普查"""

    n_vertices: int
    steps: int
    distinct: int
    expected: int
    chi2: float
    p_value: float
    thin: int = 1

    def to_json(self) -> Dict[str, object]:
        return {
            "N": self.n_vertices,
            "steps": self.steps,
            "thin": self.thin,
            "distinct": self.distinct,
            "expected": self.expected,
            "chi2": self.chi2,
            "p_value": self.p_value,
        }


def chain_census(
    N: int, steps: int, rng: RngStream, burn_in_factor: float = 10.0, thin: Optional[int] = None
) -> ChainCensus:
    """运行 RITE 链并统计访问过的状态，对访问频率做卡方均匀性检验

    每步都计入访问过的不同状态；卡方检验只用每 thin 步记录一次的状态。
    每步翻转三条边，链的周期为2，所以 thin 取奇数，默认为不小于 d_N 的最小奇数。

    Args:
        N: 奇数维度，不超过7
        steps: 总步数
        rng: 随机数流
        burn_in_factor: 预热系数
        thin: 记录间隔，必须为奇数

    Raises:
        PreconditionError: thin 不是正奇数
    """
    census = enumerate_members(Ensemble.RITE, N)
    d = regular_triangle_count(N)
    thin = thin if thin is not None else d + 1 - d % 2
    if thin < 1 or thin % 2 == 0:
        raise PreconditionError(f"thin 必须为正奇数: {thin}")
    H0 = seed_regular(N)
    chain = TournamentChain(H0, Ensemble.RITE, rng)
    chain.advance(default_burn_in(H0, Ensemble.RITE, burn_in_factor))
    seen: Set[int] = set()
    visits: Counter = Counter()
    for step in range(1, steps + 1):
        chain.step()
        bits = chain.bits()
        seen.add(bits)
        if step % thin == 0:
            visits[bits] += 1
    members = [H.bits for H in census]
    observed = np.array([visits.get(bits, 0) for bits in members], dtype=float)
    unexpected = seen - set(members)
    if unexpected:
        raise NumericalFailureError("链访问了不属于正则锦标赛的状态", {"N": N, "count": len(unexpected)})
    result = stats.chisquare(observed)
    logger.info(f"N={N} 链普查: 访问 {len(seen)}/{census.count} 个状态, p={float(result.pvalue):.4f}")
    return ChainCensus(N, steps, len(seen), census.count, float(result.statistic), float(result.pvalue), thin)
