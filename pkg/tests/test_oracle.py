"""小 N 精确预言模块测试用例

测试oracle.py模块的功能，包括：
- 正则锦标赛的计数与缓存
- 精确期望与边乘积期望
- McKay 公式与积分表示
- 链访问状态普查
"""

import json
import os
import tempfile

import numpy as np
import pytest

from trmt.ensemble import Ensemble, count_directed_triangles, regular_triangle_count
from trmt.exceptions import (
    BudgetExceededError,
    InvalidGridError,
    NumericalFailureError,
    ParityViolationError,
    PreconditionError,
)
from trmt.oracle import (
    EdgeSet,
    chain_census,
    edge_product_decay_fit,
    edge_product_expectation,
    enumerate_ite,
    enumerate_members,
    enumerate_regular,
    exact_expectation,
    exact_feasible,
    load_census,
    mckay_asymptotic,
    mckay_integral_expectation,
    mckay_ratios,
    save_census,
)
from trmt.rng import RngStream


class TestEnumeration:
    """枚举测试类"""

    def test_regular_counts(self):
        """测试 |R_3|=2, |R_5|=24, |R_7|=2640"""
        assert enumerate_regular(3).count == 2
        assert enumerate_regular(5).count == 24
        assert enumerate_regular(7).count == 2640

    def test_members_are_regular_and_distinct(self):
        """测试枚举结果两两不同且都是正则的"""
        members = list(enumerate_regular(5))
        assert len({H.bits for H in members}) == 24
        for H in members:
            assert H.is_regular()
            assert count_directed_triangles(H) == regular_triangle_count(5)

    def test_ite_enumeration(self):
        """测试 ITE 全枚举"""
        assert len(enumerate_ite(4)) == 64
        assert len(list(enumerate_ite(3))) == 8
        with pytest.raises(BudgetExceededError):
            enumerate_ite(7)

    def test_parity_and_limits(self):
        """测试偶数 N 与超出范围的 N"""
        with pytest.raises(ParityViolationError):
            enumerate_regular(6)
        with pytest.raises(BudgetExceededError):
            enumerate_regular(9)
        with pytest.raises(ParityViolationError):
            enumerate_members("rite", 4)

    def test_exact_feasible(self):
        """测试全枚举范围"""
        assert exact_feasible("ite", 6)
        assert not exact_feasible("ite", 7)
        assert exact_feasible("rite", 7)
        assert not exact_feasible("rite", 9)
        assert not exact_feasible(Ensemble.RITE, 6)

    def test_cache_roundtrip(self):
        """测试普查缓存的保存、读取与校验"""
        census = enumerate_regular(5)
        with tempfile.TemporaryDirectory() as temp_dir:
            save_census(temp_dir, census)
            loaded = load_census(temp_dir, "rite", 5)
            assert loaded is not None
            assert loaded.count == 24
            assert np.array_equal(loaded.masks, census.masks)

            manifest_path = os.path.join(temp_dir, "rite-5.json")
            with open(manifest_path, encoding="utf-8") as f:
                manifest = json.load(f)
            manifest["checksum"] = "0" * 64
            with open(manifest_path, "w", encoding="utf-8") as f:
                json.dump(manifest, f)
            assert load_census(temp_dir, "rite", 5) is None

    def test_cached_enumeration(self):
        """测试带缓存目录的枚举写入缓存"""
        with tempfile.TemporaryDirectory() as temp_dir:
            first = enumerate_regular(5, cache_dir=temp_dir)
            assert load_census(temp_dir, "rite", 5) is not None
            second = enumerate_regular(5, cache_dir=temp_dir)
            assert np.array_equal(first.masks, second.masks)


class TestExpectations:
    """期望测试类"""

    def test_exact_expectation(self):
        """测试正则锦标赛上 Tr H⁴ 的平均值为正"""
        value = exact_expectation("rite", 5, lambda H: float(np.trace(np.linalg.matrix_power(H.hermitian, 4)).real))
        assert value > 0

    def test_odd_edge_sets_vanish(self):
        """测试奇数条边的乘积期望为0"""
        E = EdgeSet.of((0, 1), (1, 2), (3, 4))
        assert abs(edge_product_expectation(5, E).value) < 1e-12

    def test_odd_edge_sets_integrate_to_zero(self):
        """测试奇数条边时积分表示在误差范围内为0"""
        for E in (EdgeSet.of((0, 1)), EdgeSet.of((0, 1), (1, 2), (3, 4))):
            integral = mckay_integral_expectation(5, E)
            assert integral.method == "GAUSS_LEGENDRE"
            assert integral.samples > 0
            assert abs(integral.value) <= 3 * integral.stderr + 1e-9
        integral = mckay_integral_expectation(7, EdgeSet.of((0, 1), (1, 2), (3, 4)), rng=RngStream(17))
        assert integral.method == "SOBOL"
        assert abs(integral.value) <= 4 * integral.stderr + 1e-9

    def test_single_pair_vanishes(self):
        """测试单条边的期望为0"""
        assert abs(edge_product_expectation(7, EdgeSet.of((2, 5))).value) < 1e-12

    def test_integral_matches_exact(self):
        """测试 N=5 时积分表示与精确枚举一致"""
        for E in (EdgeSet.of(), EdgeSet.of((0, 1), (1, 2)), EdgeSet.of((0, 1), (2, 3))):
            exact = edge_product_expectation(5, E)
            integral = mckay_integral_expectation(5, E)
            assert abs(integral.value - exact.value) <= max(3 * integral.stderr, 1e-6)

    def test_integral_matches_exact_n7(self):
        """测试 N=7 时加扰 Sobol 积分与精确枚举一致"""
        rng = RngStream(23)
        edge_sets = (
            EdgeSet.of(),
            EdgeSet.of((0, 1), (1, 2)),
            EdgeSet.of((0, 1), (2, 3)),
            EdgeSet.of((0, 1), (1, 2), (2, 3), (3, 0)),
            EdgeSet.of((0, 1), (2, 3), (4, 5), (5, 6)),
        )
        for i, E in enumerate(edge_sets):
            exact = edge_product_expectation(7, E)
            integral = mckay_integral_expectation(7, E, rng=rng.child(f"n7-{i}"))
            assert integral.method == "SOBOL"
            assert abs(integral.value - exact.value) <= max(4 * integral.stderr, 1e-6)

    def test_adjacent_pair_expectation(self):
        """测试相邻两条边 E[H_01 H_12] = -1/(N-2)"""
        E = EdgeSet.of((0, 1), (1, 2))
        for N in (3, 5, 7):
            assert edge_product_expectation(N, E).value.real == pytest.approx(-1 / (N - 2))

    def test_empty_set_has_unit_expectation(self):
        """测试空边集 E[H_∅] = 1"""
        assert edge_product_expectation(5, EdgeSet.of()).value == pytest.approx(1.0)

    def test_monte_carlo_mode(self):
        """测试 MC 模式给出误差棒"""
        E = EdgeSet.of((0, 1), (1, 2))
        estimate = edge_product_expectation(7, E, mode="mc", budget=500, rng=RngStream(5), gap=20)
        exact = edge_product_expectation(7, E)
        assert estimate.method == "MONTE_CARLO"
        assert estimate.samples == 500
        assert abs(estimate.value - exact.value) < 6 * estimate.stderr + 1e-3

    def test_mode_errors(self):
        """测试未知模式与缺少随机数流"""
        E = EdgeSet.of((0, 1), (1, 2))
        with pytest.raises(PreconditionError):
            edge_product_expectation(5, E, mode="quad")
        with pytest.raises(PreconditionError):
            edge_product_expectation(5, E, mode="mc")
        with pytest.raises(PreconditionError):
            edge_product_expectation(5, EdgeSet.of((0, 7)))

    def test_edge_set_validation(self):
        """测试重复边与自环"""
        with pytest.raises(PreconditionError):
            EdgeSet.of((0, 1), (1, 0))
        with pytest.raises(PreconditionError):
            EdgeSet.of((2, 2))
        assert EdgeSet.of((0, 1), (2, 3)).k == 2


class TestDecayFit:
    """边乘积期望衰减拟合测试类"""

    def setup_method(self):
        self.E = EdgeSet.of((0, 1), (1, 2))

    def test_exact_grid(self):
        """测试 N<=7 全枚举时 |E[H_E]| = 1/(N-2)"""
        fit = edge_product_decay_fit((7, 3, 5), self.E, RngStream(1))
        assert [N for N, _ in fit.estimates] == [3, 5, 7]
        for N, estimate in fit.estimates:
            assert estimate.method == "EXACT_ENUM"
            assert abs(estimate.value) == pytest.approx(1 / (N - 2))
        assert fit.exponent <= -0.6

    def test_monte_carlo_grid(self):
        """测试超出枚举范围时用链样本估计且指数不大于 -0.6"""
        fit = edge_product_decay_fit((5, 7, 9), self.E, RngStream(12), budget=1500, gap=40)
        methods = dict((N, estimate.method) for N, estimate in fit.estimates)
        assert methods[9] == "MONTE_CARLO"
        assert fit.exponent <= -0.6
        payload = fit.to_json()
        assert payload["edges"] == [[0, 1], [1, 2]]
        assert [point["N"] for point in payload["points"]] == [5, 7, 9]
        json.dumps(payload)

    def test_grid_too_small(self):
        """测试网格点少于2个"""
        with pytest.raises(InvalidGridError):
            edge_product_decay_fit((5,), self.E, RngStream(1))

    def test_vanishing_expectation(self):
        """测试期望为0的边集无法取对数"""
        with pytest.raises(NumericalFailureError):
            edge_product_decay_fit((5, 7), EdgeSet.of((0, 1)), RngStream(1))


class TestMcKay:
    """McKay 公式测试类"""

    def test_ratio_errors_decrease(self):
        """测试公式相对误差随 N 递减"""
        rows = mckay_ratios([5, 7])
        errors = [abs(row["ratio"] - 1) for row in rows]
        assert errors[1] < errors[0]
        assert rows[0]["exact"] == 24

    def test_asymptotic_value(self):
        """测试 N=5 的公式值"""
        assert mckay_asymptotic(5) / 24 == pytest.approx(0.94, abs=0.02)

    def test_parity(self):
        """测试偶数 N"""
        with pytest.raises(ParityViolationError):
            mckay_asymptotic(4)


class TestChainCensus:
    """链普查测试类"""

    def test_visits_all_states(self):
        """测试 N=5 的链访问全部 24 个状态且频率均匀"""
        result = chain_census(5, 50_000, RngStream(8))
        assert result.distinct == 24
        assert result.expected == 24
        assert result.thin == 31
        assert result.to_json()["N"] == 5
        assert result.p_value > 1e-4

    def test_even_thin_rejected(self):
        """测试偶数记录间隔"""
        with pytest.raises(PreconditionError):
            chain_census(5, 100, RngStream(8), thin=30)
