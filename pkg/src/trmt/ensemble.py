"""锦标赛矩阵模块

负责锦标赛矩阵的表示、采样和马尔可夫链。
主要功能：
- 上三角比特位存储的符号矩阵 S (H = iS)
- ITE 的均匀采样与正则锦标赛(RITE)的循环种子
- 翻边 / 三角形反转两种移动以及对应的马尔可夫链
- 有向三角形计数、距离、转移概率等结构量
- 矩阵的 JSON 序列化与轨迹的 NDJSON 读写
"""

import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .exceptions import (
    InvalidDimensionError,
    InvalidMoveError,
    ParityViolationError,
    PreconditionError,
)
from .output import read_ndjson
from .rng import RngStream


class Ensemble(str, Enum):
    """矩阵系综"""

    ITE = "ITE"
    RITE = "RITE"

    @classmethod
    def parse(cls, value: Union[str, "Ensemble"]) -> "Ensemble":
        if isinstance(value, Ensemble):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise PreconditionError(f"未知的系综: {value!r} (支持 ITE, RITE)")


def pair_count(n: int) -> int:
    """上三角自由元素个数 N(N-1)/2"""
    return n * (n - 1) // 2


def pair_index(n: int, p: int, q: int) -> int:
    """(p, q), p<q 在行优先上三角中的位置"""
    return p * n - p * (p + 1) // 2 + (q - p - 1)


def regular_triangle_count(n: int) -> int:
    """正则锦标赛中带标号有向三角形的个数 d_N = N(N-1)(N+1)/4"""
    return n * (n - 1) * (n + 1) // 4


@dataclass(frozen=True)
class TournamentMatrix:
    """锦标赛矩阵

    只存储上三角：bits 的第 k 位为 1 表示第 k 个 (p<q) 元素 S_pq = +1。
    H = iS 是厄米矩阵，S_qp = -S_pq，对角线为 0。
    """

    n_vertices: int
    bits: int

    def __post_init__(self) -> None:
        if self.n_vertices < 2:
            raise InvalidDimensionError(f"矩阵维度至少为2: N={self.n_vertices}")
        if self.bits < 0 or self.bits >> pair_count(self.n_vertices):
            raise InvalidDimensionError("比特位超出上三角范围")

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> "TournamentMatrix":
        """从反对称 ±1 符号矩阵构造"""
        signs = np.asarray(signs)
        n = signs.shape[0]
        rows, cols = np.triu_indices(n, k=1)
        upper = signs[rows, cols]
        if np.any(np.abs(upper) != 1) or np.any(signs[cols, rows] != -upper):
            raise PreconditionError("符号矩阵必须是非对角元为±1的反对称矩阵")
        packed = np.packbits((upper > 0).astype(np.uint8), bitorder="little")
        return cls(n, int.from_bytes(packed.tobytes(), "little"))

    @cached_property
    def signs(self) -> np.ndarray:
        """N×N 的 int8 符号矩阵 S (只读)"""
        n = self.n_vertices
        d = pair_count(n)
        raw = self.bits.to_bytes(max(1, (d + 7) // 8), "little")
        flags = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:d].astype(np.int8)
        rows, cols = np.triu_indices(n, k=1)
        matrix = np.zeros((n, n), dtype=np.int8)
        matrix[rows, cols] = 2 * flags - 1
        matrix[cols, rows] = -matrix[rows, cols]
        matrix.setflags(write=False)
        return matrix

    @property
    def hermitian(self) -> np.ndarray:
        """复厄米矩阵 H = iS"""
        return 1j * self.signs.astype(float)

    def sign(self, p: int, q: int) -> int:
        """单个元素 S_pq"""
        if p == q:
            return 0
        if p < q:
            return 1 if (self.bits >> pair_index(self.n_vertices, p, q)) & 1 else -1
        return -self.sign(q, p)

    def row_sums(self) -> np.ndarray:
        """RowSumVector：第 p 个分量为 Σ_q S_pq"""
        return self.signs.sum(axis=1, dtype=np.int64)

    def is_regular(self) -> bool:
        return bool(np.all(self.row_sums() == 0))

    def to_json(self) -> Dict[str, object]:
        """{"n": N, "bits": 行优先上三角的十六进制串}"""
        width = max(1, (pair_count(self.n_vertices) + 3) // 4)
        return {"n": self.n_vertices, "bits": format(self.bits, f"0{width}x")}

    @classmethod
    def from_json(cls, payload: Union[str, Dict[str, object]]) -> "TournamentMatrix":
        if isinstance(payload, str):
            payload = json.loads(payload)
        assert isinstance(payload, dict)
        return cls(int(str(payload["n"])), int(str(payload["bits"]), 16))


@dataclass(frozen=True)
class EdgeFlip:
    """ITE 移动：翻转 (p, q) 的方向，要求 p<q"""

    p: int
    q: int

    def __post_init__(self) -> None:
        if not self.p < self.q:
            raise InvalidMoveError(f"EdgeFlip 要求 p<q: ({self.p}, {self.q})")

    def edges(self) -> List[Tuple[int, int]]:
        return [(self.p, self.q)]


@dataclass(frozen=True)
class TriangleReversal:
    """RITE 移动：反转有向三角形 (q0, q1, q2) 的定向"""

    q0: int
    q1: int
    q2: int

    def __post_init__(self) -> None:
        if len({self.q0, self.q1, self.q2}) != 3:
            raise InvalidMoveError(f"三角形顶点必须两两不同: {self.vertices}")

    @property
    def vertices(self) -> Tuple[int, int, int]:
        return (self.q0, self.q1, self.q2)

    def edges(self) -> List[Tuple[int, int]]:
        return [(self.q0, self.q1), (self.q1, self.q2), (self.q2, self.q0)]


MoveProposal = Union[EdgeFlip, TriangleReversal]


def is_directed_triangle(H: TournamentMatrix, q0: int, q1: int, q2: int) -> bool:
    """Θ_q(H) = 1 当且仅当三点互异且 S_{q0q1} = S_{q1q2} = S_{q2q0}"""
    if len({q0, q1, q2}) != 3:
        return False
    s = H.sign(q0, q1)
    return s == H.sign(q1, q2) == H.sign(q2, q0)


def flip_edges(H: TournamentMatrix, edges: Sequence[Tuple[int, int]]) -> TournamentMatrix:
    """不做合法性检查地翻转若干条边(无向)的符号"""
    n = H.n_vertices
    mask = 0
    for p, q in edges:
        a, b = (p, q) if p < q else (q, p)
        mask ^= 1 << pair_index(n, a, b)
    return TournamentMatrix(n, H.bits ^ mask)


def sample_ite(N: int, rng: RngStream) -> TournamentMatrix:
    """均匀采样一个锦标赛矩阵：N(N-1)/2 个独立公平符号

    Raises:
        InvalidDimensionError: N < 2
    """
    if N < 2:
        raise InvalidDimensionError(f"矩阵维度至少为2: N={N}")
    return TournamentMatrix(N, rng.bits(pair_count(N)))


def seed_regular(N: int) -> TournamentMatrix:
    """循环正则锦标赛：p 战胜 q 当且仅当 (q-p) mod N ∈ {1,…,(N-1)/2}

    Raises:
        ParityViolationError: N 为偶数
        InvalidDimensionError: N < 3
    """
    if N % 2 == 0:
        raise ParityViolationError(f"正则锦标赛要求N为奇数: N={N}")
    if N < 3:
        raise InvalidDimensionError(f"正则锦标赛要求N>=3: N={N}")
    half = (N - 1) // 2
    signs = np.zeros((N, N), dtype=np.int8)
    for p in range(N):
        for q in range(N):
            if p != q:
                # p 战胜 q 对应 A_pq = 1，即 H_pq = -i
                signs[p, q] = -1 if (q - p) % N <= half else 1
    return TournamentMatrix.from_signs(signs)


def apply_move(H: TournamentMatrix, move: MoveProposal) -> TournamentMatrix:
    """执行一次移动

    Raises:
        InvalidMoveError: 顶点越界，或三角形反转作用在非有向三角形上
    """
    n = H.n_vertices
    if isinstance(move, EdgeFlip):
        if move.q >= n:
            raise InvalidMoveError(f"顶点越界: {move}")
        return flip_edges(H, move.edges())
    if max(move.vertices) >= n or min(move.vertices) < 0:
        raise InvalidMoveError(f"顶点越界: {move}")
    if not is_directed_triangle(H, *move.vertices):
        raise InvalidMoveError(f"{move.vertices} 不是有向三角形")
    return flip_edges(H, move.edges())


def count_directed_triangles(H: TournamentMatrix) -> int:
    """带标号有向三角形个数：满足 Θ_q(H)=1 的有序三元组数"""
    S = H.signs
    total = 0
    nonzero = S != 0
    for a in range(H.n_vertices):
        s_ab = S[a][:, None]
        s_ca = S[:, a][None, :]
        hit = (s_ab == S) & (S == s_ca) & nonzero & nonzero[a][:, None] & nonzero[:, a][None, :]
        total += int(np.count_nonzero(hit))
    return total


def _require_regular(H: TournamentMatrix) -> None:
    if H.n_vertices % 2 == 0:
        raise ParityViolationError(f"正则锦标赛要求N为奇数: N={H.n_vertices}")
    if not H.is_regular():
        raise PreconditionError("矩阵的行和不全为0，不属于正则锦标赛")


def _draw_ordered_triples(n: int, rng: RngStream, batch: int) -> np.ndarray:
    """均匀抽取有序互异三元组"""
    a = rng.integers(0, n, size=batch)
    b = rng.integers(0, n - 1, size=batch)
    c = rng.integers(0, n - 2, size=batch)
    b = b + (b >= a)
    low = np.minimum(a, b)
    high = np.maximum(a, b)
    c = c + (c >= low)
    c = c + (c >= high)
    return np.stack([a, b, c], axis=1)


def _sample_triangle_signs(S: np.ndarray, rng: RngStream) -> Tuple[int, int, int]:
    n = S.shape[0]
    while True:
        for q0, q1, q2 in _draw_ordered_triples(n, rng, 32).tolist():
            s = S[q0, q1]
            if s == S[q1, q2] and s == S[q2, q0]:
                return int(q0), int(q1), int(q2)


def sample_triangle(H: TournamentMatrix, rng: RngStream) -> TriangleReversal:
    """在全部 d_N 个带标号有向三角形中均匀选取一个(拒绝采样)

    Raises:
        PreconditionError: H 不是正则锦标赛
    """
    _require_regular(H)
    return TriangleReversal(*_sample_triangle_signs(np.asarray(H.signs), rng))


def triangle_acceptance_rate(N: int) -> float:
    """拒绝采样的接受率 d_N / (N(N-1)(N-2))"""
    return regular_triangle_count(N) / (N * (N - 1) * (N - 2))


def default_burn_in(H: TournamentMatrix, ensemble: Ensemble, factor: float = 10.0) -> int:
    """默认预热步数 factor·d_N·ln(d_N)"""
    n = H.n_vertices
    d = pair_count(n) if ensemble is Ensemble.ITE else regular_triangle_count(n)
    return int(math.ceil(factor * d * math.log(max(d, 2))))


class TournamentChain:
    """均匀提议马尔可夫链的可变状态

    链内部用 Python 列表保存符号矩阵，每步原地修改；
    只有在 state() 时才生成不可变的 TournamentMatrix。
    """

    _BATCH = 4096

    def __init__(self, H0: TournamentMatrix, ensemble: Union[str, Ensemble], rng: RngStream):
        self.ensemble = Ensemble.parse(ensemble)
        if self.ensemble is Ensemble.RITE:
            _require_regular(H0)
        self.n = H0.n_vertices
        self.rng = rng
        self.steps_taken = 0
        self._S: List[List[int]] = np.asarray(H0.signs, dtype=np.int64).tolist()
        self._pairs = list(zip(*(a.tolist() for a in np.triu_indices(self.n, k=1))))
        self._queue: List[Tuple[int, ...]] = []

    def _refill(self) -> None:
        if self.ensemble is Ensemble.ITE:
            picks = self.rng.integers(0, len(self._pairs), size=self._BATCH).tolist()
            self._queue = [self._pairs[k] for k in picks]
        else:
            self._queue = [tuple(t) for t in _draw_ordered_triples(self.n, self.rng, self._BATCH).tolist()]
        self._queue.reverse()

    def _next_proposal(self) -> Tuple[int, ...]:
        if not self._queue:
            self._refill()
        return self._queue.pop()

    def step(self) -> None:
        S = self._S
        if self.ensemble is Ensemble.ITE:
            p, q = self._next_proposal()
            S[p][q] = -S[p][q]
            S[q][p] = -S[q][p]
        else:
            while True:
                q0, q1, q2 = self._next_proposal()
                s = S[q0][q1]
                if s == S[q1][q2] and s == S[q2][q0]:
                    break
            for a, b in ((q0, q1), (q1, q2), (q2, q0)):
                S[a][b] = -S[a][b]
                S[b][a] = -S[b][a]
        self.steps_taken += 1

    def advance(self, count: int) -> None:
        for _ in range(count):
            self.step()

    def bits(self) -> int:
        """当前状态的上三角比特掩码"""
        S = self._S
        value = 0
        for k, (p, q) in enumerate(self._pairs):
            if S[p][q] > 0:
                value |= 1 << k
        return value

    def state(self) -> TournamentMatrix:
        return TournamentMatrix.from_signs(np.array(self._S, dtype=np.int8))


def run_chain(
    H0: TournamentMatrix,
    ensemble: Union[str, Ensemble],
    steps: int,
    rng: RngStream,
    thin: int = 1,
    burn_in: Optional[int] = None,
    burn_in_factor: float = 10.0,
) -> List[TournamentMatrix]:
    """运行均匀提议的马尔可夫链

    先预热 burn_in 步(默认 factor·d_N·ln d_N)，然后输出预热后的状态，
    之后每 thin 步输出一次，共走 steps 步。steps=0 时直接返回 [H0]。

    Args:
        H0: 初始状态，RITE 时必须行和为0
        ensemble: ITE 或 RITE
        steps: 预热之后的步数
        rng: 随机数流
        thin: 输出间隔
        burn_in: 预热步数，None 表示使用默认启发式

    Returns:
        List[TournamentMatrix]: 轨迹
    """
    ensemble = Ensemble.parse(ensemble)
    if thin < 1:
        raise PreconditionError(f"thin 必须>=1: {thin}")
    if ensemble is Ensemble.RITE:
        _require_regular(H0)
    if steps == 0:
        return [H0]
    if burn_in is None:
        burn_in = default_burn_in(H0, ensemble, burn_in_factor)
    logger.debug(f"运行 {ensemble.value} 链: N={H0.n_vertices}, 预热={burn_in}, 步数={steps}, 间隔={thin}")

    chain = TournamentChain(H0, ensemble, rng)
    chain.advance(burn_in)
    trajectory = [chain.state()]
    for step in range(1, steps + 1):
        chain.step()
        if step % thin == 0:
            trajectory.append(chain.state())
    return trajectory


def sample_ensemble(
    ensemble: Union[str, Ensemble],
    N: int,
    count: int,
    rng: RngStream,
    gap: Optional[int] = None,
    burn_in_factor: float = 10.0,
) -> List[TournamentMatrix]:
    """抽取 count 个去相关的系综样本

    ITE 直接独立均匀采样；RITE 从循环种子出发运行一条链，
    预热后每隔 gap 步(默认 d_N)记录一次状态。

    Args:
        ensemble: ITE 或 RITE
        N: 矩阵维度
        count: 样本数
        rng: 随机数流
        gap: RITE 记录间隔
        burn_in_factor: 预热系数

    Returns:
        List[TournamentMatrix]: 样本
    """
    ensemble = Ensemble.parse(ensemble)
    if count <= 0:
        return []
    if ensemble is Ensemble.ITE:
        return [sample_ite(N, rng) for _ in range(count)]

    H0 = seed_regular(N)
    if gap is None:
        gap = regular_triangle_count(N)
    chain = TournamentChain(H0, ensemble, rng)
    chain.advance(default_burn_in(H0, ensemble, burn_in_factor))
    logger.debug(f"RITE 链预热完成: N={N}, 记录间隔={gap}")
    samples = [chain.state()]
    while len(samples) < count:
        chain.advance(gap)
        samples.append(chain.state())
    return samples


def hamming_distance(H: TournamentMatrix, other: TournamentMatrix) -> int:
    """不同的自由符号个数"""
    if H.n_vertices != other.n_vertices:
        raise InvalidDimensionError("两个矩阵维度不同")
    return bin(H.bits ^ other.bits).count("1")


def regular_distance(H: TournamentMatrix, other: TournamentMatrix) -> float:
    """正则锦标赛之间的距离，归一化为一次三角形反转恰好等于1

    一次反转改变3个自由符号，因此取汉明距离的1/3。
    """
    return hamming_distance(H, other) / 3


def to_adjacency(H: TournamentMatrix) -> np.ndarray:
    """邻接矩阵 A = ½(E - I - iH)，A_pq = 1 表示 p 战胜 q"""
    S = H.signs.astype(np.int64)
    A = (1 - S) // 2
    np.fill_diagonal(A, 0)
    return A


def from_adjacency(A: np.ndarray) -> TournamentMatrix:
    A = np.asarray(A, dtype=np.int64)
    S = 1 - 2 * A
    np.fill_diagonal(S, 0)
    return TournamentMatrix.from_signs(S)


def neighbours(H: TournamentMatrix, ensemble: Union[str, Ensemble]) -> List[TournamentMatrix]:
    """一步可达的全部状态(按带标号移动计重)"""
    ensemble = Ensemble.parse(ensemble)
    n = H.n_vertices
    if ensemble is Ensemble.ITE:
        return [flip_edges(H, [(p, q)]) for p in range(n) for q in range(p + 1, n)]
    result = []
    for q0 in range(n):
        for q1 in range(n):
            for q2 in range(n):
                if is_directed_triangle(H, q0, q1, q2):
                    result.append(flip_edges(H, [(q0, q1), (q1, q2), (q2, q0)]))
    return result


def transition_probability(
    H: TournamentMatrix, other: TournamentMatrix, ensemble: Union[str, Ensemble]
) -> float:
    """精确转移概率 ρ(H → H')"""
    ensemble = Ensemble.parse(ensemble)
    moves = neighbours(H, ensemble)
    if not moves:
        return 0.0
    return sum(1 for m in moves if m == other) / len(moves)


def write_trajectory(trajectory: Sequence[TournamentMatrix]) -> str:
    """轨迹的 NDJSON 文本"""
    lines = [json.dumps(H.to_json(), sort_keys=True) for H in trajectory]
    return "".join(line + "\n" for line in lines)


def read_trajectory(text: str) -> List[TournamentMatrix]:
    return [TournamentMatrix.from_json(line) for line in text.splitlines() if line.strip()]


def load_trajectory(path: str) -> List[TournamentMatrix]:
    """读取 `trmt sample` 写出的 NDJSON 轨迹文件"""
    return [TournamentMatrix.from_json(record) for record in read_ndjson(path)]
