"""锦标赛矩阵模块测试用例

测试ensemble.py模块的功能，包括：
- 符号矩阵的比特位存储与序列化
- ITE 采样与正则种子
- 翻边与三角形反转
- 马尔可夫链的结构不变量
"""

import os
import tempfile
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from trmt.ensemble import (
    EdgeFlip,
    Ensemble,
    TournamentChain,
    TournamentMatrix,
    TriangleReversal,
    apply_move,
    count_directed_triangles,
    from_adjacency,
    hamming_distance,
    is_directed_triangle,
    load_trajectory,
    neighbours,
    read_trajectory,
    regular_distance,
    regular_triangle_count,
    run_chain,
    sample_ensemble,
    sample_ite,
    sample_triangle,
    seed_regular,
    to_adjacency,
    transition_probability,
    write_trajectory,
)
from trmt.exceptions import (
    InvalidDimensionError,
    InvalidMoveError,
    ParityViolationError,
    PreconditionError,
)
from trmt.oracle import enumerate_ite, enumerate_regular
from trmt.output import emit
from trmt.rng import RngStream


class TestTournamentMatrix:
    """矩阵表示测试类"""

    def setup_method(self):
        self.rng = RngStream(2024)

    def test_signs_roundtrip(self):
        """测试符号矩阵与比特位互相转换"""
        H = sample_ite(7, self.rng)
        assert TournamentMatrix.from_signs(H.signs) == H
        S = H.signs
        assert np.array_equal(S, -S.T)
        assert np.all(np.diag(S) == 0)

    def test_hermitian(self):
        """测试 H = iS 厄米且 Tr H² = N(N-1)"""
        H = sample_ite(6, self.rng)
        M = H.hermitian
        assert np.allclose(M, M.conj().T)
        assert np.isclose(np.trace(M @ M).real, 6 * 5)

    def test_sign_lookup(self):
        """测试单个元素与符号矩阵一致"""
        H = sample_ite(5, self.rng)
        for p in range(5):
            for q in range(5):
                assert H.sign(p, q) == H.signs[p, q]

    def test_json_roundtrip(self):
        """测试 JSON 编解码"""
        H = sample_ite(9, self.rng)
        assert TournamentMatrix.from_json(H.to_json()) == H
        trajectory = [sample_ite(4, self.rng) for _ in range(3)]
        assert read_trajectory(write_trajectory(trajectory)) == trajectory

    def test_trajectory_file(self):
        """测试写到文件的 NDJSON 轨迹可以读回"""
        trajectory = run_chain(seed_regular(7), "rite", 20, RngStream(5), thin=4, burn_in=10)
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "runs", "rite-7.ndjson")
            emit(write_trajectory(trajectory), path)
            assert load_trajectory(path) == trajectory

    def test_invalid_dimension(self):
        """测试 N<2"""
        with pytest.raises(InvalidDimensionError):
            sample_ite(1, self.rng)
        with pytest.raises(InvalidDimensionError):
            TournamentMatrix(3, 1 << 3)

    def test_adjacency_convention(self):
        """测试 A_pq = 1 当且仅当 S_pq = -1"""
        H = sample_ite(6, self.rng)
        A = to_adjacency(H)
        assert np.all(A + A.T + np.eye(6, dtype=int) == 1)
        assert np.all((A == 1) == (H.signs == -1))
        assert from_adjacency(A) == H


class TestRegularSeed:
    """正则锦标赛测试类"""

    def test_seed_regular_rows(self):
        """测试循环种子行和为0且三角形数为 d_N"""
        for N in (3, 5, 7, 9):
            H = seed_regular(N)
            assert H.is_regular()
            assert count_directed_triangles(H) == regular_triangle_count(N)

    def test_seed_regular_parity(self):
        """测试偶数 N"""
        with pytest.raises(ParityViolationError):
            seed_regular(6)
        with pytest.raises(InvalidDimensionError):
            seed_regular(1)

    def test_cyclic_orientation(self):
        """测试 0 战胜 1"""
        H = seed_regular(5)
        assert to_adjacency(H)[0, 1] == 1

    def test_triangle_count_n3(self):
        """测试 N=3 的一个有向三角形有6种带标号写法"""
        assert count_directed_triangles(seed_regular(3)) == 6
        assert regular_triangle_count(3) == 6


class TestMoves:
    """移动测试类"""

    def setup_method(self):
        self.rng = RngStream(5)

    def test_edge_flip(self):
        """测试翻边只改变一个元素"""
        H = sample_ite(5, self.rng)
        flipped = apply_move(H, EdgeFlip(1, 3))
        assert flipped.sign(1, 3) == -H.sign(1, 3)
        assert hamming_distance(H, flipped) == 1

    def test_edge_flip_order(self):
        """测试 EdgeFlip 要求 p<q"""
        with pytest.raises(InvalidMoveError):
            EdgeFlip(3, 1)

    def test_triangle_reversal_preserves_regularity(self):
        """测试反转有向三角形保持行和为0"""
        H = seed_regular(5)
        move = sample_triangle(H, self.rng)
        assert is_directed_triangle(H, *move.vertices)
        after = apply_move(H, move)
        assert after.is_regular()
        assert regular_distance(H, after) == 1

    def test_reversal_of_non_triangle(self):
        """测试反转非有向三角形"""
        H = seed_regular(5)
        triple = next(
            (a, b, c)
            for a in range(5) for b in range(5) for c in range(5)
            if len({a, b, c}) == 3 and not is_directed_triangle(H, a, b, c)
        )
        with pytest.raises(InvalidMoveError):
            apply_move(H, TriangleReversal(*triple))

    def test_sample_triangle_requires_regular(self):
        """测试非正则矩阵上选三角形"""
        H = apply_move(seed_regular(5), EdgeFlip(0, 1))
        with pytest.raises(PreconditionError):
            sample_triangle(H, self.rng)

    def test_neighbour_counts(self):
        """测试一步可达状态的个数等于 d_N"""
        assert len(neighbours(sample_ite(5, self.rng), Ensemble.ITE)) == 10
        assert len(neighbours(seed_regular(5), Ensemble.RITE)) == regular_triangle_count(5)

    def test_transition_probability(self):
        """测试每个有向三角形的转移概率为 6/d_N"""
        H = seed_regular(5)
        after = apply_move(H, sample_triangle(H, self.rng))
        assert transition_probability(H, after, "rite") == pytest.approx(6 / regular_triangle_count(5))
        assert transition_probability(H, H, "rite") == 0.0

    def test_sample_triangle_uniform(self):
        """测试 N=5 时 30 个带标号有向三角形被均匀选中"""
        H = seed_regular(5)
        listings = {
            (a, b, c)
            for a in range(5) for b in range(5) for c in range(5)
            if is_directed_triangle(H, a, b, c)
        }
        assert len(listings) == regular_triangle_count(5) == 30
        counts = Counter(sample_triangle(H, self.rng).vertices for _ in range(30_000))
        assert set(counts) == listings
        result = stats.chisquare([counts[t] for t in sorted(listings)])
        assert result.pvalue > 1e-4

    def test_detailed_balance(self):
        """测试 N<=5 的全部一步转移满足 ρ(H→H') = ρ(H'→H)"""
        cases = (
            (Ensemble.ITE, enumerate_ite(4), 1 / 6),
            (Ensemble.ITE, enumerate_ite(5), 1 / 10),
            (Ensemble.RITE, enumerate_regular(5), 6 / regular_triangle_count(5)),
        )
        for ensemble, members, rate in cases:
            for H in members:
                for other in set(neighbours(H, ensemble)):
                    forward = transition_probability(H, other, ensemble)
                    assert forward == pytest.approx(rate)
                    assert transition_probability(other, H, ensemble) == pytest.approx(forward)


class TestChain:
    """马尔可夫链测试类"""

    def test_rite_chain_invariants(self):
        """测试 RITE 链每个状态都是正则的"""
        trajectory = run_chain(seed_regular(7), Ensemble.RITE, 200, RngStream(1), thin=10, burn_in=50)
        assert len(trajectory) == 21
        d = regular_triangle_count(7)
        for H in trajectory:
            assert H.is_regular()
            assert count_directed_triangles(H) == d

    def test_zero_steps(self):
        """测试 steps=0 返回起点"""
        H0 = seed_regular(5)
        assert run_chain(H0, "rite", 0, RngStream(1)) == [H0]

    def test_chain_determinism(self):
        """测试相同种子的链逐位一致"""
        a = run_chain(seed_regular(7), "rite", 100, RngStream(9), burn_in=10)
        b = run_chain(seed_regular(7), "rite", 100, RngStream(9), burn_in=10)
        assert a == b

    def test_rite_chain_rejects_irregular_start(self):
        """测试 RITE 链的起点必须正则"""
        with pytest.raises(PreconditionError):
            TournamentChain(apply_move(seed_regular(5), EdgeFlip(0, 1)), Ensemble.RITE, RngStream(1))
        with pytest.raises(ParityViolationError):
            run_chain(sample_ite(4, RngStream(3)), "rite", 10, RngStream(1))

    def test_ite_chain_changes_one_sign(self):
        """测试 ITE 链每步只改变一个符号"""
        chain = TournamentChain(sample_ite(6, RngStream(3)), Ensemble.ITE, RngStream(4))
        before = chain.bits()
        chain.step()
        assert bin(before ^ chain.bits()).count("1") == 1
        assert chain.state().bits == chain.bits()

    def test_ite_chain_visits_all_states_uniformly(self):
        """测试 N=4 的 ITE 链均匀访问全部 64 个状态"""
        # 每步翻转一个符号，链的周期为2，所以记录间隔取奇数
        trajectory = run_chain(sample_ite(4, RngStream(3)), Ensemble.ITE, 13 * 6400, RngStream(31), thin=13)
        counts = Counter(H.bits for H in trajectory)
        assert len(counts) == 64
        result = stats.chisquare([counts[bits] for bits in range(64)])
        assert result.pvalue > 1e-4

    def test_sample_ensemble(self):
        """测试系综样本数与正则性"""
        samples = sample_ensemble("rite", 7, 5, RngStream(11), gap=20, burn_in_factor=1.0)
        assert len(samples) == 5
        assert all(H.is_regular() for H in samples)
        assert len(sample_ensemble("ite", 6, 4, RngStream(11))) == 4
        assert sample_ensemble("ite", 6, 0, RngStream(11)) == []

    def test_unknown_ensemble(self):
        """测试未知系综名"""
        with pytest.raises(PreconditionError):
            Ensemble.parse("goe")
