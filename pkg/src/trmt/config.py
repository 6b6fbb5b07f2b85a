"""配置模块

负责读取和验证config.toml配置文件。
主要功能：
- 读取TOML格式的配置文件
- 验证配置项的有效性
- 提供配置访问接口
"""

import os
from pathlib import Path
from typing import Any, Dict, Optional

import toml
from loguru import logger


class ConfigError(Exception):
    """配置相关错误"""
    pass


DEFAULTS: Dict[str, Any] = {
    "seed": 20180101,
    "threads": 0,
    "log_level": "INFO",
    "scaling": "lemma",
    "cache_dir": None,
    "enumeration_budget": 200_000_000,
    "moment_budget": 5_000_000_000,
    "burn_in_factor": 10.0,
    "calibration_budget": 10_000,
    "long_running": False,
}

_SCALINGS = ("theorem", "lemma")
_LOG_LEVELS = ("TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL")


class Config:
    """配置管理类

    负责加载和管理实验的全局参数：随机种子、线程数、预算与缓存目录。
    """

    def __init__(self, **values: Any):
        """初始化配置

        Args:
            values: 覆盖默认值的配置项
        """
        merged = dict(DEFAULTS)
        merged.update(values)
        self._validate_config(merged)
        self.seed: int = int(merged["seed"])
        self.threads: int = int(merged["threads"])
        self.log_level: str = str(merged["log_level"]).upper()
        self.scaling: str = str(merged["scaling"]).lower()
        self.enumeration_budget: int = int(merged["enumeration_budget"])
        self.moment_budget: int = int(merged["moment_budget"])
        self.burn_in_factor: float = float(merged["burn_in_factor"])
        self.calibration_budget: int = int(merged["calibration_budget"])
        self.long_running: bool = bool(merged["long_running"])
        self._cache_dir: Optional[str] = merged["cache_dir"]

    @classmethod
    def load(cls, config_path: Optional[str] = None) -> "Config":
        """加载配置文件

        Args:
            config_path: 配置文件路径，如果为None则按优先级查找；
                找不到任何配置文件时使用内置默认值

        Returns:
            Config: 配置对象

        Raises:
            ConfigError: 指定的配置文件不存在、格式错误或内容无效时抛出
        """
        if config_path is None:
            config_path = cls._find_config_file()
            if not Path(config_path).exists():
                logger.debug("未找到配置文件，使用内置默认值")
                return cls()

        config_file = Path(config_path)

        # 检查配置文件是否存在
        if not config_file.exists():
            logger.error(f"配置文件不存在: {config_path}")
            raise ConfigError(f"配置文件不存在: {config_path}")

        # 读取配置文件
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                config_data = toml.load(f)
            logger.info(f"成功加载配置文件: {config_path}")
            logger.debug(f"配置文件内容: {config_data}")
        except toml.TomlDecodeError as e:
            logger.error(f"配置文件格式错误: {e}")
            raise ConfigError(f"配置文件格式错误: {e}")
        except Exception as e:
            logger.error(f"读取配置文件失败: {e}")
            raise ConfigError(f"读取配置文件失败: {e}")

        # 支持两种格式：[trmt] 和 [experiments.trmt]
        if 'trmt' in config_data:
            section = config_data['trmt']
            logger.debug("使用简化配置格式: [trmt]")
        elif 'experiments' in config_data and 'trmt' in config_data['experiments']:
            section = config_data['experiments']['trmt']
            logger.debug("使用完整配置格式: [experiments.trmt]")
        else:
            logger.error("配置文件中缺少trmt配置段")
            raise ConfigError("配置文件中缺少trmt配置段: [trmt] 或 [experiments.trmt]")

        unknown = sorted(set(section) - set(DEFAULTS))
        if unknown:
            logger.error(f"未知的配置项: {unknown}")
            raise ConfigError(f"未知的配置项: {', '.join(unknown)}")

        return cls(**section)

    @staticmethod
    def _find_config_file() -> str:
        """查找配置文件

        按以下优先级查找配置文件：
        1. 环境变量 TRMT_CONFIG_PATH
        2. ~/.config/smalltrmt/config.toml (XDG标准)
        3. ./config.toml (当前目录)

        Returns:
            str: 配置文件路径(可能不存在)
        """
        env_config = os.getenv('TRMT_CONFIG_PATH')
        if env_config and Path(env_config).exists():
            logger.debug(f"使用环境变量指定的配置文件: {env_config}")
            return env_config

        xdg_config = Config.get_default_config_dir() / "config.toml"
        if xdg_config.exists():
            logger.debug(f"使用XDG标准配置文件: {xdg_config}")
            return str(xdg_config)

        local_config = Path("config.toml")
        if local_config.exists():
            logger.debug(f"使用当前目录配置文件: {local_config}")
            return str(local_config)

        return str(xdg_config)

    @staticmethod
    def get_config_path() -> str:
        """获取配置文件路径

        Returns:
            str: 配置文件路径
        """
        return Config._find_config_file()

    @staticmethod
    def get_default_config_dir() -> Path:
        """获取默认配置目录

        Returns:
            Path: 默认配置目录路径
        """
        return Path.home() / ".config" / "smalltrmt"

    @staticmethod
    def _validate_config(values: Dict[str, Any]) -> None:
        """验证配置项

        Args:
            values: 合并默认值之后的配置字典

        Raises:
            ConfigError: 配置无效时抛出
        """
        seed = values["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0 or seed >= 2 ** 64:
            raise ConfigError(f"seed 必须是64位非负整数: {seed!r}")

        if str(values["scaling"]).lower() not in _SCALINGS:
            raise ConfigError(f"scaling 只支持 {', '.join(_SCALINGS)}: {values['scaling']!r}")

        if str(values["log_level"]).upper() not in _LOG_LEVELS:
            raise ConfigError(f"无效的日志级别: {values['log_level']!r}")

        for key in ("threads", "enumeration_budget", "moment_budget", "calibration_budget"):
            try:
                number = int(values[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{key} 必须是整数: {values[key]!r}")
            if number < 0:
                raise ConfigError(f"{key} 不能为负数: {number}")

        if float(values["burn_in_factor"]) <= 0:
            raise ConfigError(f"burn_in_factor 必须为正: {values['burn_in_factor']!r}")

        logger.debug(f"配置验证通过: seed={seed}, scaling={values['scaling']}")

    @property
    def cache_dir(self) -> Path:
        """普查缓存目录，环境变量 TRMT_CACHE_DIR 优先"""
        env_dir = os.getenv('TRMT_CACHE_DIR')
        if env_dir:
            return Path(env_dir)
        if self._cache_dir:
            return Path(self._cache_dir).expanduser()
        return self.get_default_config_dir() / "cache"

    def effective_threads(self) -> int:
        """实际使用的线程数，0 表示使用全部可用核心"""
        if self.threads > 0:
            return self.threads
        return os.cpu_count() or 1

    def to_dict(self) -> Dict[str, Any]:
        """可序列化的实验配置

        Returns:
            dict: 配置字典(键有序)
        """
        return {
            "seed": self.seed,
            "threads": self.threads,
            "log_level": self.log_level,
            "scaling": self.scaling,
            "cache_dir": str(self.cache_dir),
            "enumeration_budget": self.enumeration_budget,
            "moment_budget": self.moment_budget,
            "burn_in_factor": self.burn_in_factor,
            "calibration_budget": self.calibration_budget,
            "long_running": self.long_running,
        }

    def get_config_info(self) -> dict:
        """获取配置信息

        Returns:
            dict: 配置信息字典
        """
        info = self.to_dict()
        info["effective_threads"] = self.effective_threads()
        return info
