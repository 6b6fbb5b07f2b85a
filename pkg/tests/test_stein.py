"""Stein / OU 模块测试用例

测试stein.py模块的功能，包括：
- Gauss-Hermite 求积
- Stein 方程的数值解与闭式解比较
- E[Af(Z)] = 0 的蒙特卡洛检验
- 函数界常数与时间积分
- 平稳密度与 OU 转移
"""

import math

import numpy as np
import pytest

from trmt.exceptions import PreconditionError
from trmt.rng import RngStream
from trmt.selftest import stein_suite
from trmt.stein import (
    OUSpec,
    QuadratureGrid,
    apply_adjoint_generator,
    apply_generator,
    function_bound_check,
    function_bound_constant,
    gauss_hermite,
    gaussian_expectation,
    random_polynomial,
    ou_transition_sample,
    solve_stein,
    stationary_density,
    stein_lemma_mc,
    stein_residual,
    time_integral_constant,
)


def _bump(x):
    return np.exp(-0.5 * (x[..., 0] ** 2 + x[..., 1] ** 2) / 4)


class TestOUSpec:
    """OU 参数测试类"""

    def test_rates_and_variances(self):
        """测试坐标 n 的速率与方差都为 n"""
        spec = OUSpec(k_max=4)
        assert spec.dim == 3
        assert list(spec.rates) == [2.0, 3.0, 4.0]
        assert spec.coordinate(3) == 1

    def test_invalid_range(self):
        """测试不合法的坐标范围"""
        with pytest.raises(PreconditionError):
            OUSpec(k_max=1)
        with pytest.raises(PreconditionError):
            OUSpec(k_max=3).coordinate(5)


class TestQuadrature:
    """求积测试类"""

    def test_gauss_hermite_moments(self):
        """测试标准正态的二阶和四阶矩"""
        knots, weights = gauss_hermite(20)
        assert weights.sum() == pytest.approx(1.0)
        assert np.dot(weights, knots ** 2) == pytest.approx(1.0)
        assert np.dot(weights, knots ** 4) == pytest.approx(3.0)

    def test_gaussian_expectation(self):
        """测试 E[X_2² + X_3²] = 2 + 3"""
        spec = OUSpec(k_max=3)
        assert gaussian_expectation(lambda x: x[..., 0] ** 2 + x[..., 1] ** 2, spec) == pytest.approx(5.0)

    def test_grid_horizon(self):
        """测试时间截断满足 e^{-k_min T} < 1e-12"""
        grid = QuadratureGrid.build(OUSpec(k_max=3))
        assert math.exp(-2 * grid.horizon) <= 1e-12 * (1 + 1e-9)
        assert len(grid.refined().time_nodes) > len(grid.time_nodes)

    def test_hermite_order_floor(self):
        """测试 Hermite 阶数下限"""
        with pytest.raises(PreconditionError):
            QuadratureGrid.build(OUSpec(k_max=3), hermite_order=10)


class TestSteinEquation:
    """Stein 方程测试类"""

    def setup_method(self):
        self.spec = OUSpec(k_max=3)
        self.grid = QuadratureGrid.build(self.spec)

    def test_linear_closed_form(self):
        """测试 φ = X_2 的解为 f = X_2/2"""
        value = solve_stein(lambda x: x[..., 0], [1.3, -0.4], self.spec, self.grid)
        assert value == pytest.approx(0.65, abs=1e-8)

    def test_square_closed_form(self):
        """测试 φ = X_3² 的解为 f = (X_3² - 3)/6"""
        X = [0.2, 1.5]
        value = solve_stein(lambda x: x[..., 1] ** 2, X, self.spec, self.grid)
        assert value == pytest.approx((1.5 ** 2 - 3) / 6, abs=1e-8)

    def test_residuals(self):
        """测试 Af + φ - E[φ(Z)] 接近0"""
        assert stein_residual(lambda x: x[..., 0], [0.5, 1.0], self.spec, self.grid) < 1e-6
        assert stein_residual(_bump, [0.3, -0.8], self.spec, self.grid) < 1e-3

    def test_generator_of_linear_function(self):
        """测试 A X_2 = -2X_2"""
        assert apply_generator(lambda x: float(x[0]), [1.5, 0.0], self.spec) == pytest.approx(-3.0)

    def test_stein_lemma(self):
        """测试高斯样本上 E[Af(Z)] 的均值与误差阈值"""
        suite = {"linear": lambda x: x[..., 0], "product": lambda x: x[..., 0] * x[..., 1]}
        results = stein_lemma_mc(self.spec, suite, 20000, RngStream(3))
        assert [r.name for r in results] == ["stein_lemma[linear]", "stein_lemma[product]"]
        assert all(abs(r.statistic) < 2 * r.threshold for r in results)

    def test_stein_lemma_square_and_polynomial(self):
        """测试 f=X_3² 与随机4次多项式的 E[Af(Z)] 在误差范围内为0"""
        suite = {
            "square": lambda x: x[..., 1] ** 2,
            "polynomial": random_polynomial(self.spec, RngStream(8), degree=4, indices=(2, 3)),
        }
        results = stein_lemma_mc(self.spec, suite, 20000, RngStream(4))
        assert [r.name for r in results] == ["stein_lemma[polynomial]", "stein_lemma[square]"]
        assert all(abs(r.statistic) < 2 * r.threshold for r in results)

    def test_selftest_suite_members(self):
        """测试自检用的函数组包含平方与随机多项式"""
        suite = stein_suite(self.spec, RngStream(8))
        assert {"linear", "square", "product", "cubic", "bump", "polynomial"} <= set(suite)
        assert suite["polynomial"].degree == 4


class TestRandomPolynomial:
    """随机多项式测试类"""

    def setup_method(self):
        self.spec = OUSpec(k_max=3)

    def test_monomials(self):
        """测试两个变量、次数不超过4的单项式共15个"""
        poly = random_polynomial(self.spec, RngStream(1))
        assert len(poly.monomials) == 15
        assert len(poly.coefficients) == 15
        assert poly.degree == 4
        assert () in poly.monomials
        assert (0, 0, 1, 1) in poly.monomials

    def test_seeded_coefficients(self):
        """测试相同种子给出相同系数，不同种子给出不同系数"""
        a = random_polynomial(self.spec, RngStream(1))
        b = random_polynomial(self.spec, RngStream(1))
        c = random_polynomial(self.spec, RngStream(2))
        assert a == b
        assert a.coefficients != c.coefficients

    def test_evaluation(self):
        """测试在标准化坐标上求值"""
        poly = random_polynomial(self.spec, RngStream(1), degree=1)
        x = np.array([[0.0, 0.0], [math.sqrt(self.spec.variances[0]), 0.0]])
        values = poly(x)
        assert values.shape == (2,)
        assert values[0] == pytest.approx(poly.coefficients[0])
        assert values[1] == pytest.approx(poly.coefficients[0] + poly.coefficients[1])

    def test_invalid_arguments(self):
        """测试越界指标与负次数"""
        with pytest.raises(PreconditionError):
            random_polynomial(self.spec, RngStream(1), indices=(2, 5))
        with pytest.raises(PreconditionError):
            random_polynomial(self.spec, RngStream(1), degree=-1)


class TestBounds:
    """函数界测试类"""

    def test_bound_constant(self):
        """测试 r_1 = √π/4"""
        assert function_bound_constant(1) == pytest.approx(math.sqrt(math.pi) / 4)
        assert function_bound_constant(2) == pytest.approx(1 / (2 * math.sqrt(math.pi)))

    def test_time_integral(self):
        """测试时间积分与闭式值一致"""
        check = time_integral_constant(1)
        assert check.closed_form == pytest.approx(math.pi / 4)
        for j in (1, 2, 3):
            assert time_integral_constant(j).error < 1e-8
        with pytest.raises(PreconditionError):
            time_integral_constant(0)

    def test_function_bound_holds(self):
        """测试有界 φ 的解满足一阶导数界"""
        spec = OUSpec(k_max=3)
        report = function_bound_check(_bump, 1, spec, [[0.0, 0.0], [1.0, -1.0]], phi_norm=1.0)
        assert report.holds
        assert report.bound == pytest.approx(math.sqrt(math.pi) / 4)
        assert report.to_json()["pass"] is True

    def test_function_bound_order(self):
        """测试 j 超出范围"""
        with pytest.raises(PreconditionError):
            function_bound_check(_bump, 4, OUSpec(k_max=3), [[0.0, 0.0]])


class TestStationarity:
    """平稳分布测试类"""

    def test_adjoint_annihilates_density(self):
        """测试前向算子作用在平稳密度上为0"""
        spec = OUSpec(k_max=3)

        def density(p):
            return stationary_density(p, spec)

        for X in ([0.0, 0.0], [1.0, -2.0], [-0.5, 2.5]):
            assert abs(apply_adjoint_generator(density, X, spec)) < 1e-6

    def test_transition_limits(self):
        """测试 t=0 不动，t 很大时回到平稳方差"""
        spec = OUSpec(k_max=3)
        X = np.array([1.0, -2.0])
        assert np.allclose(ou_transition_sample(X, 0.0, spec, RngStream(1)), X)
        far = ou_transition_sample(X, 50.0, spec, RngStream(1), size=20000)
        assert np.allclose(far.var(axis=0), spec.variances, rtol=0.1)

    def test_negative_time(self):
        """测试负时间"""
        with pytest.raises(PreconditionError):
            ou_transition_sample([0.0, 0.0], -1.0, OUSpec(k_max=3), RngStream(1))
