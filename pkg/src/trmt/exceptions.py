"""异常模块

工具包内所有可预期错误的异常类型。
命令行层统一捕获 TrmtError，记录日志后以退出码 1 结束。
"""

from typing import Any, Dict, Optional


class TrmtError(Exception):
    """工具包错误基类"""
    pass


class InvalidDimensionError(TrmtError):
    """矩阵维度不合法(N < 2)"""
    pass


class ParityViolationError(TrmtError):
    """正则锦标赛要求N为奇数"""
    pass


class InvalidMoveError(TrmtError):
    """马尔可夫链的移动对当前矩阵不合法"""
    pass


class InvalidDegreeError(TrmtError):
    """切比雪夫多项式阶数不合法"""
    pass


class CalibrationMissError(TrmtError):
    """校准表中缺少所需条目"""
    pass


class BudgetExceededError(TrmtError):
    """计算量超出配置预算"""
    pass


class PreconditionError(TrmtError):
    """输入不满足前置条件"""
    pass


class InvalidGridError(TrmtError):
    """拟合所用的N网格点数不足"""
    pass


class InvalidInputError(TrmtError):
    """统计输入不足或不一致"""
    pass


class NumericalFailureError(TrmtError):
    """数值计算失败

    Args:
        message: 错误描述
        diagnostic: 附带的诊断信息，命令行会以JSON形式输出
    """

    def __init__(self, message: str, diagnostic: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostic: Dict[str, Any] = dict(diagnostic or {})
        self.diagnostic.setdefault("error", message)
