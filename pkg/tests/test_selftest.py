"""自检模块测试用例"""

import json

import pytest

from trmt.cycles import census
from trmt.exceptions import PreconditionError
from trmt.rng import RngStream
from trmt.selftest import SelftestReport, appendix_checks, recount_cycle_classes, run_selftest
from trmt.stats import CheckResult

CHEAP_GROUPS = ["structural", "lambda", "stationarity", "remainder"]


class TestSelftest:
    """自检测试类"""

    def test_cheap_groups_pass(self):
        """测试快速分组全部通过"""
        report = run_selftest(11, only=CHEAP_GROUPS)
        assert report.checks
        assert report.passed, [c.to_json() for c in report.failures()]
        prefixes = {c.name.split("[")[0] for c in report.checks}
        assert prefixes == {"structural", "lambda_form", "stationarity", "remainder_identity"}

    def test_report_is_deterministic(self):
        """测试相同种子的报告 JSON 逐字节一致"""
        first = json.dumps(run_selftest(5, only=["structural", "gauss"]).to_json(), sort_keys=True)
        second = json.dumps(run_selftest(5, only=["structural", "gauss"]).to_json(), sort_keys=True)
        assert first == second

    def test_appendix_group(self):
        """测试积分表示与精确枚举的比对、奇数 k 的积分与衰减指数"""
        results = appendix_checks(RngStream(1), edge_sets=(((0, 1), (2, 3)),), N_values=(5,), decay_grid=(3, 5, 7))
        assert [r.name for r in results] == [
            "appendix[N=5,E=[[0, 1], [2, 3]]]",
            "appendix[odd_k,N=5]",
            "appendix[decay_exponent,N=[3, 5, 7]]",
        ]
        assert all(r.passed for r in results)

    def test_cycle_recount(self):
        """测试逐个顶点序列重数的 N=5 圈分类与普查一致"""
        for L in (4, 5):
            total, lambdas, stars, mismatches = recount_cycle_classes(5, L)
            counts = census(5, L)
            assert (total, lambdas, stars) == (counts.total, counts.lambda_count, counts.lambda_star)
            assert mismatches == 0

    def test_unknown_level(self):
        """测试未知的自检级别"""
        with pytest.raises(PreconditionError):
            run_selftest(1, level="nightly")

    def test_report_failures(self):
        """测试报告汇总未通过的检验"""
        report = SelftestReport(1, "quick", [CheckResult("a", 0.0, 1.0, True), CheckResult("b", 2.0, 1.0, False)])
        assert not report.passed
        assert [c.name for c in report.failures()] == ["b"]
        assert report.to_json()["passed"] is False
