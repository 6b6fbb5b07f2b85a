"""切比雪夫谱统计模块测试用例

测试chebyshev.py模块的功能，包括：
- 切比雪夫系数与求值
- 特征值迹与矩阵幂迹
- 校准表与中心化统计量
"""

import math
import os
import tempfile

import numpy as np
import pytest

from trmt.chebyshev import (
    CalibrationMethod,
    CalibrationTable,
    Scaling,
    TraceVector,
    build_calibration,
    centred_statistics,
    chebyshev_coeffs,
    chebyshev_eval,
    eig_traces,
    power_traces,
    spectral_traces,
)
from trmt.ensemble import Ensemble, sample_ite, seed_regular
from trmt.exceptions import (
    CalibrationMissError,
    InvalidDegreeError,
    InvalidDimensionError,
    NumericalFailureError,
    PreconditionError,
)
from trmt.rng import RngStream


class TestChebyshevCoeffs:
    """切比雪夫系数测试类"""

    def test_low_degrees(self):
        """测试已知的低阶系数"""
        assert chebyshev_coeffs(1).coeffs == (1,)
        assert chebyshev_coeffs(2).coeffs == (2, -1)
        assert chebyshev_coeffs(4).coeffs == (8, -8, 1)
        assert chebyshev_coeffs(6).coeffs == (32, -48, 18, -1)

    def test_value_at_one(self):
        """测试 T_n(1) = 1"""
        for n in range(1, 25):
            assert sum(chebyshev_coeffs(n).coeffs) == 1

    def test_invalid_degree(self):
        """测试阶数 n<=0"""
        with pytest.raises(InvalidDegreeError):
            chebyshev_coeffs(0)
        with pytest.raises(InvalidDegreeError):
            chebyshev_coeffs(-3)

    def test_power_coefficients(self):
        """测试升幂排列"""
        assert chebyshev_coeffs(3).power_coefficients() == [0, -3, 0, 4]

    def test_eval_matches_cosine(self):
        """测试 [-1, 1] 上 T_n(cos t) = cos(nt)"""
        t = np.linspace(0, math.pi, 11)
        for n in (2, 5, 8):
            assert np.allclose(chebyshev_eval(n, np.cos(t)), np.cos(n * t))
            assert chebyshev_coeffs(n).evaluate(0.3) == pytest.approx(float(chebyshev_eval(n, 0.3)))

    def test_eval_outside_interval(self):
        """测试区间外 T_n(x) = cosh(n arccosh x)"""
        assert float(chebyshev_eval(4, 1.5)) == pytest.approx(math.cosh(4 * math.acosh(1.5)))


class TestTraces:
    """迹统计量测试类"""

    def setup_method(self):
        self.rng = RngStream(17)

    def test_scaling_sigma(self):
        """测试两种缩放"""
        assert Scaling.THEOREM.sigma(9) == pytest.approx(6.0)
        assert Scaling.LEMMA.sigma(6) == pytest.approx(4.0)
        with pytest.raises(InvalidDimensionError):
            Scaling.LEMMA.sigma(2)
        with pytest.raises(PreconditionError):
            Scaling.parse("wigner")

    def test_second_trace_is_constant(self):
        """测试 Tr T_2 = 2Tr(H²)/σ² - N 与矩阵无关"""
        N = 7
        expected = 2 * N * (N - 1) / (4 * (N - 2)) - N
        for _ in range(3):
            H = sample_ite(N, self.rng)
            assert eig_traces(H, 1)[0] == pytest.approx(expected)

    def test_odd_traces_vanish(self):
        """测试奇数阶迹为0(谱关于0对称)"""
        H = sample_ite(8, self.rng)
        assert np.max(np.abs(spectral_traces(H, [1, 3, 5], Scaling.LEMMA))) < 1e-9

    def test_power_traces_agree(self):
        """测试矩阵幂法与特征值法一致"""
        for scaling in (Scaling.LEMMA, Scaling.THEOREM):
            H = sample_ite(9, self.rng)
            assert np.allclose(eig_traces(H, 4, scaling), power_traces(H, 4, scaling), atol=1e-8)

    def test_invalid_k_max(self):
        """测试 k_max<1"""
        with pytest.raises(InvalidDegreeError):
            eig_traces(sample_ite(5, self.rng), 0)


class TestCalibration:
    """校准表测试类"""

    def test_exact_calibration_centres(self):
        """测试精确校准下系综平均的 Y_n 为0"""
        table = build_calibration(Ensemble.RITE, 5, 3, 0, RngStream(1))
        assert table.get(2).method is CalibrationMethod.EXACT_ENUM
        assert table.get(2).stderr == 0.0
        Y = centred_statistics(seed_regular(5), table, 3)
        assert Y.y(1) == pytest.approx(0.0, abs=1e-12)

    def test_monte_carlo_budget(self):
        """测试蒙特卡洛校准的最低样本数"""
        with pytest.raises(PreconditionError):
            build_calibration(Ensemble.ITE, 8, 2, 100, RngStream(1))

    def test_monte_carlo_calibration(self):
        """测试蒙特卡洛校准给出误差棒"""
        table = build_calibration(Ensemble.ITE, 8, 2, 1000, RngStream(1))
        entry = table.get(2)
        assert entry.method is CalibrationMethod.MONTE_CARLO
        assert entry.samples == 1000
        assert entry.stderr > 0

    def test_calibration_miss(self):
        """测试缺少条目或维度不符"""
        table = build_calibration(Ensemble.ITE, 5, 2, 0, RngStream(1))
        with pytest.raises(CalibrationMissError):
            table.get(3)
        with pytest.raises(CalibrationMissError):
            centred_statistics(sample_ite(6, RngStream(2)), table, 2)

    def test_save_and_load(self):
        """测试校准表的 JSON 保存与读取"""
        table = build_calibration(Ensemble.ITE, 4, 3, 0, RngStream(1))
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "table.json")
            table.save(path)
            loaded = CalibrationTable.load(path)
        assert loaded.to_json() == table.to_json()
        with pytest.raises(CalibrationMissError):
            CalibrationTable.load("/nonexistent/table.json")

    def test_merge_prefers_exact(self):
        """测试合并时保留精确条目"""
        exact = build_calibration(Ensemble.ITE, 5, 2, 0, RngStream(1))
        mc = build_calibration(Ensemble.ITE, 5, 3, 1000, RngStream(1), exact=False)
        merged = exact.merge(mc)
        assert merged.get(2).method is CalibrationMethod.EXACT_ENUM
        assert merged.get(3).method is CalibrationMethod.MONTE_CARLO

    def test_trace_vector_rejects_nan(self):
        """测试非有限值"""
        with pytest.raises(NumericalFailureError):
            TraceVector(2, (0.0, float("nan")), Scaling.LEMMA, Ensemble.ITE, 5)
