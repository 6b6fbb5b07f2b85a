"""非回溯圈模块

负责完全图 K_N 上非回溯圈的枚举以及由圈求和得到的切比雪夫迹。
主要功能：
- 深度优先枚举带标号的非回溯圈(流式输出)
- 圈权重 H_ω 与圈求和形式的 Tr T_m(H/(2√(N-2)))
- 加权 Hashimoto 矩阵给出的独立求和路径
- 自由边、Λ / Λ* 分类、Betti 数及普查
"""

from collections import Counter
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Iterator, List, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from loguru import logger

from .ensemble import TournamentMatrix
from .exceptions import BudgetExceededError, InvalidDimensionError, PreconditionError
from .parallel import ordered_map

DEFAULT_ENUMERATION_BUDGET = 200_000_000

Edge = Tuple[int, int]


def cycle_constant(N: int) -> int:
    """圈恒等式中的常数项 |E(K_N)| - |V(K_N)| = N(N-3)/2

    与特征值结果逐点比对确定，固定不变。
    """
    return N * (N - 3) // 2


@dataclass(frozen=True)
class NBCycle:
    """带标号的闭合游走 (p_0, …, p_{L-1})，隐含回边 (p_{L-1}, p_0)"""

    vertices: Tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.vertices)

    def edges(self) -> List[Edge]:
        """按遍历顺序的有向边，包括回边"""
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def is_non_backtracking(self) -> bool:
        v = self.vertices
        L = len(v)
        if L < 2:
            return False
        return all(v[i] != v[(i + 1) % L] and v[i] != v[(i + 2) % L] for i in range(L))


Walk = Union[NBCycle, Sequence[int]]


def enumeration_cost(N: int, L: int) -> int:
    """枚举工作量 N²(N-2)^{L-2}"""
    return N * N * max(N - 2, 1) ** max(L - 2, 0)


def _check_enumeration(N: int, L: int, budget: int) -> None:
    if N < 3:
        raise InvalidDimensionError(f"非回溯圈枚举要求N>=3: N={N}")
    if L < 2:
        raise PreconditionError(f"圈长至少为2: L={L}")
    cost = enumeration_cost(N, L)
    if cost > budget:
        logger.error(f"枚举工作量 {cost} 超出预算 {budget}")
        raise BudgetExceededError(f"N={N}, L={L} 的枚举工作量 {cost} 超出预算 {budget}")


def _extend(N: int, L: int, path: List[int]) -> Iterator[NBCycle]:
    if len(path) == L:
        if path[-1] != path[0] and path[-2] != path[0] and path[1] != path[-1]:
            yield NBCycle(tuple(path))
        return
    a, b = path[-2], path[-1]
    for c in range(N):
        if c != a and c != b:
            path.append(c)
            yield from _extend(N, L, path)
            path.pop()


def enumerate_nb_cycles(N: int, L: int, budget: int = DEFAULT_ENUMERATION_BUDGET) -> Iterator[NBCycle]:
    """流式枚举 K_N 上长度为 L 的全部非回溯圈

    起点和方向不同的圈视为不同。每一步排除前两个顶点，
    到达长度 L 时检查首尾闭合条件。

    Args:
        N: 顶点数，至少为3
        L: 圈长，至少为2
        budget: 工作量上限

    Returns:
        Iterator[NBCycle]: 每个圈恰好输出一次

    Raises:
        BudgetExceededError: N²(N-2)^{L-2} 超出预算
    """
    _check_enumeration(N, L, budget)
    for p0 in range(N):
        for p1 in range(N):
            if p1 != p0:
                yield from _extend(N, L, [p0, p1])


def cycle_weight(H: TournamentMatrix, cycle: NBCycle) -> complex:
    """H_ω = H_{p0p1}H_{p1p2}…H_{p_{L-1}p0}"""
    result = 1 + 0j
    for p, q in cycle.edges():
        result *= 1j * H.sign(p, q)
    return result


def _signed_sum_from(S: List[List[int]], N: int, L: int, p0: int, p1: int) -> int:
    """从有向边 (p0, p1) 出发的全部圈的 ∏S 之和(精确整数)"""

    def walk(prev2: int, prev: int, product: int, depth: int) -> int:
        if depth == L:
            if prev != p0 and prev2 != p0 and prev != p1:
                return product * S[prev][p0]
            return 0
        row = S[prev]
        total = 0
        for c in range(N):
            if c != prev and c != prev2:
                total += walk(prev, c, product * row[c], depth + 1)
        return total

    return walk(p0, p1, S[p0][p1], 2)


def cycle_signed_sum(
    H: TournamentMatrix, L: int, budget: int = DEFAULT_ENUMERATION_BUDGET, threads: int = 1
) -> int:
    """Σ_{ω∈Ω_L} ∏ S 沿 ω，按 (p0, p1) 分块并行"""
    N = H.n_vertices
    _check_enumeration(N, L, budget)
    S = np.asarray(H.signs, dtype=np.int64).tolist()
    starts = [(p0, p1) for p0 in range(N) for p1 in range(N) if p0 != p1]
    partial = ordered_map(lambda s: _signed_sum_from(S, N, L, s[0], s[1]), starts, threads)
    return sum(partial)


def cycle_sum(H: TournamentMatrix, L: int, budget: int = DEFAULT_ENUMERATION_BUDGET, threads: int = 1) -> complex:
    """Σ_{ω∈Ω_L} H_ω = i^L Σ ∏S"""
    return (1j ** L) * cycle_signed_sum(H, L, budget, threads)


def cycle_sum_trace(
    H: TournamentMatrix, n: int, budget: int = DEFAULT_ENUMERATION_BUDGET, threads: int = 1
) -> float:
    """由非回溯圈求和得到的 Tr T_n(H/(2√(N-2)))

    Tr T_n = ½(N-2)^{-n/2} [Σ_{Ω_n} H_ω - c_N(1+(-1)^n)]，c_N = N(N-3)/2。

    Raises:
        BudgetExceededError: 枚举工作量超出预算
    """
    N = H.n_vertices
    if n < 1:
        raise PreconditionError(f"阶数至少为1: n={n}")
    total = cycle_sum(H, n, budget, threads) if n >= 2 else 0j
    # 奇数长度的圈按反向成对抵消
    constant = cycle_constant(N) * (1 + (-1) ** n)
    return 0.5 * (N - 2) ** (-n / 2) * (total.real - constant)


def hashimoto_matrix(H: TournamentMatrix) -> Tuple[np.ndarray, List[Edge]]:
    """加权非回溯矩阵 B_{(a→b),(b→c)} = H_bc，c ∉ {a, b}

    Returns:
        (B, directed_edges): B 的行列按 directed_edges 编号
    """
    N = H.n_vertices
    directed = [(a, b) for a in range(N) for b in range(N) if a != b]
    index = {e: k for k, e in enumerate(directed)}
    hermitian = H.hermitian
    B = np.zeros((len(directed), len(directed)), dtype=complex)
    for k, (a, b) in enumerate(directed):
        for c in range(N):
            if c != a and c != b:
                B[k, index[(b, c)]] = hermitian[b, c]
    return B, directed


def hashimoto_cycle_sum(H: TournamentMatrix, L: int) -> complex:
    """Tr(B^L)：与深度优先枚举相互独立的圈求和"""
    B, _ = hashimoto_matrix(H)
    return complex(np.trace(np.linalg.matrix_power(B, L)))


@dataclass(frozen=True)
class EdgeMultiset:
    """无序边的遍历次数 ν_ω(e)"""

    counts: Dict[Edge, int]

    @classmethod
    def from_walks(cls, *walks: Walk) -> "EdgeMultiset":
        """把若干闭合游走的边累计成多重集"""
        counter: Counter = Counter()
        for walk in walks:
            vertices = walk.vertices if isinstance(walk, NBCycle) else tuple(walk)
            L = len(vertices)
            for i in range(L):
                p, q = vertices[i], vertices[(i + 1) % L]
                counter[(min(p, q), max(p, q))] += 1
        return cls(dict(counter))

    def total(self) -> int:
        return sum(self.counts.values())

    def free_edges(self) -> FrozenSet[Edge]:
        return frozenset(e for e, c in self.counts.items() if c % 2 == 1)


def free_edges(*walks: Walk) -> FrozenSet[Edge]:
    """一组游走的自由边：总遍历次数为奇数的边"""
    return EdgeMultiset.from_walks(*walks).free_edges()


@dataclass(frozen=True)
class CycleClassification:
    is_lambda: bool
    is_star: bool
    betti: int
    free_edges: FrozenSet[Edge]


def betti_number(edges: Iterable[Edge]) -> int:
    """第一 Betti 数 |E| - |V| + 连通分支数"""
    graph = nx.Graph()
    graph.add_edges_from(edges)
    if graph.number_of_nodes() == 0:
        return 0
    return graph.number_of_edges() - graph.number_of_nodes() + nx.number_connected_components(graph)


def classify_cycle(cycle: NBCycle) -> CycleClassification:
    """自由边集、Λ/Λ* 归属以及所经过子图的 Betti 数"""
    multiset = EdgeMultiset.from_walks(cycle)
    free = multiset.free_edges()
    is_star = all(c == 1 for c in multiset.counts.values())
    return CycleClassification(
        is_lambda=bool(free),
        is_star=is_star,
        betti=betti_number(multiset.counts),
        free_edges=free,
    )


def subgraph_betti_check(G: Sequence[Edge], sub: Sequence[Edge]) -> bool:
    """检查 |E(G')| - |V(G')| <= |E(G)| - |V(G)|

    Args:
        G: 连通图的边表
        sub: G 的子图的边表

    Raises:
        PreconditionError: G 不连通、G' 为空或不是 G 的子图
    """
    graph = nx.Graph()
    graph.add_edges_from(G)
    if graph.number_of_nodes() == 0 or not nx.is_connected(graph):
        raise PreconditionError("G 必须是非空连通图")
    subgraph = nx.Graph()
    subgraph.add_edges_from(sub)
    if subgraph.number_of_nodes() < 1:
        raise PreconditionError("子图至少要有一个顶点")
    missing = [e for e in subgraph.edges() if not graph.has_edge(*e)]
    if missing:
        raise PreconditionError(f"子图的边不在 G 中: {missing}")
    left = subgraph.number_of_edges() - subgraph.number_of_nodes()
    right = graph.number_of_edges() - graph.number_of_nodes()
    return left <= right


def lambda_sum(H: TournamentMatrix, L: int, budget: int = DEFAULT_ENUMERATION_BUDGET) -> complex:
    """Σ_{ω∈Λ_L} H_ω：至少含一条奇数次边的圈"""
    total = 0j
    for cycle in enumerate_nb_cycles(H.n_vertices, L, budget):
        if EdgeMultiset.from_walks(cycle).free_edges():
            total += cycle_weight(H, cycle)
    return total


def lambda_statistic(H: TournamentMatrix, n: int, budget: int = DEFAULT_ENUMERATION_BUDGET) -> float:
    """ITE 的圈求和形式 Y_n = ½(N-2)^{-n} Σ_{Λ_{2n}} H_ω"""
    N = H.n_vertices
    return 0.5 * (N - 2) ** (-n) * lambda_sum(H, 2 * n, budget).real


@dataclass(frozen=True)
class CycleCensus:
    n_vertices: int
    length: int
    total: int
    lambda_count: int
    lambda_star: int

    def row(self) -> Tuple[int, int, int, int, int]:
        return (self.n_vertices, self.length, self.total, self.lambda_count, self.lambda_star)


CENSUS_HEADER = ("N", "L", "total", "lambda", "lambda_star")


def census(N: int, L: int, budget: int = DEFAULT_ENUMERATION_BUDGET) -> CycleCensus:
    """按 Λ / Λ* 分类统计长度为 L 的非回溯圈"""
    total = lambdas = stars = 0
    for cycle in enumerate_nb_cycles(N, L, budget):
        counts = EdgeMultiset.from_walks(cycle).counts.values()
        total += 1
        if any(c % 2 == 1 for c in counts):
            lambdas += 1
        if all(c == 1 for c in counts):
            stars += 1
    return CycleCensus(N, L, total, lambdas, stars)


def identity_discrepancy(
    H: TournamentMatrix, n: int, budget: int = DEFAULT_ENUMERATION_BUDGET, threads: int = 1
) -> float:
    """|圈求和迹 - 特征值迹|，LEMMA 缩放"""
    from .chebyshev import Scaling, spectral_traces

    eig = float(spectral_traces(H, [n], Scaling.LEMMA)[0])
    return abs(cycle_sum_trace(H, n, budget, threads) - eig)
