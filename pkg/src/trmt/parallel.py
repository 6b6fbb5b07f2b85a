"""并行工具

按输入顺序返回结果的线程池映射。归约在调用方按下标顺序完成，
因此结果与线程数无关。
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from loguru import logger

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(func: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """并行映射并保持输入顺序

    Args:
        func: 对单个元素的纯函数
        items: 输入序列
        threads: 线程数，<=1 时串行执行

    Returns:
        List: 与输入顺序一致的结果列表
    """
    work = list(items)
    if threads <= 1 or len(work) <= 1:
        return [func(item) for item in work]
    logger.debug(f"并行执行 {len(work)} 个任务, 线程数={threads}")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, work))
