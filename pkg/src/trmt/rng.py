"""随机数流模块

所有随机性都来自一个根种子，按 (seed, stream_id) 派生独立子流。
相同的 (seed, stream_id) 逐位复现相同的轨迹。
"""

import hashlib
from typing import Any, List, Optional, Tuple, Union

import numpy as np


def _name_to_id(name: str) -> int:
    """把子流名字稳定地映射为整数"""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class RngStream:
    """带种子的随机数流

    Args:
        seed: 64位根种子
        stream_id: 子流编号
    """

    def __init__(self, seed: int, stream_id: int = 0, _spawn_key: tuple = ()):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._spawn_key = tuple(_spawn_key) + (self.stream_id,)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)
        self.generator: np.random.Generator = np.random.default_rng(sequence)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self._spawn_key})"

    def child(self, name: str) -> "RngStream":
        """按名字派生子流，例如 'calibration' 或 'chain-3'"""
        return RngStream(self.seed, _name_to_id(name), _spawn_key=self._spawn_key)

    def spawn(self, count: int) -> List["RngStream"]:
        """派生 count 个编号为 0..count-1 的独立子流"""
        return [RngStream(self.seed, i, _spawn_key=self._spawn_key) for i in range(count)]

    def integers(self, low: int, high: int, size: Optional[Union[int, Tuple[int, ...]]] = None) -> Any:
        return self.generator.integers(low, high, size=size)

    def random(self, size: Optional[Union[int, Tuple[int, ...]]] = None) -> Any:
        return self.generator.random(size)

    def normal(self, scale: Any = 1.0, size: Optional[Union[int, Tuple[int, ...]]] = None) -> Any:
        return self.generator.normal(0.0, scale, size)

    def bits(self, count: int) -> int:
        """返回 count 个独立公平比特打包成的整数"""
        if count <= 0:
            return 0
        raw = self.generator.integers(0, 2, size=count, dtype=np.uint8)
        packed = np.packbits(raw, bitorder="little")
        return int.from_bytes(packed.tobytes(), "little")
