"""配置模块测试用例

测试config.py模块的功能，包括：
- 配置文件读取
- 配置验证
- 默认值处理
- 错误处理
"""

import os
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from trmt.config import DEFAULTS, Config, ConfigError
from trmt.install import EXAMPLE_CONFIG, post_install, write_example_config


def _write_config(content: str) -> str:
    with tempfile.NamedTemporaryFile(mode='w', suffix='.toml', delete=False, encoding='utf-8') as f:
        f.write(content)
        return f.name


class TestConfig:
    """配置模块测试类"""

    def test_load_valid_config(self):
        """测试加载有效配置文件"""
        config_path = _write_config("""
[trmt]
seed = 7
threads = 2
scaling = "theorem"
calibration_budget = 2000
        """)
        try:
            config = Config.load(config_path)
            assert config.seed == 7
            assert config.threads == 2
            assert config.scaling == "theorem"
            assert config.calibration_budget == 2000
            assert config.moment_budget == DEFAULTS["moment_budget"]
        finally:
            os.unlink(config_path)

    def test_load_long_form_section(self):
        """测试 [experiments.trmt] 完整格式"""
        config_path = _write_config("""
[experiments.trmt]
seed = 11
long_running = true
        """)
        try:
            config = Config.load(config_path)
            assert config.seed == 11
            assert config.long_running is True
        finally:
            os.unlink(config_path)

    def test_load_nonexistent_config(self):
        """测试加载不存在的配置文件"""
        with pytest.raises(ConfigError, match="配置文件不存在"):
            Config.load("/nonexistent/config.toml")

    def test_load_invalid_toml(self):
        """测试加载无效的TOML文件"""
        config_path = _write_config("""
[trmt
# 缺少闭合括号
seed = 1
        """)
        try:
            with pytest.raises(ConfigError, match="配置文件格式错误"):
                Config.load(config_path)
        finally:
            os.unlink(config_path)

    def test_load_config_missing_section(self):
        """测试缺少trmt配置段"""
        config_path = _write_config("""
[other]
seed = 1
        """)
        try:
            with pytest.raises(ConfigError, match="缺少trmt配置段"):
                Config.load(config_path)
        finally:
            os.unlink(config_path)

    def test_unknown_key(self):
        """测试未知配置项"""
        config_path = _write_config("""
[trmt]
webhooks = []
        """)
        try:
            with pytest.raises(ConfigError, match="webhooks"):
                Config.load(config_path)
        finally:
            os.unlink(config_path)

    def test_validate_scaling(self):
        """测试无效的缩放方式"""
        with pytest.raises(ConfigError, match="scaling"):
            Config(scaling="wigner")

    def test_validate_negative_budget(self):
        """测试负的预算"""
        with pytest.raises(ConfigError, match="enumeration_budget"):
            Config(enumeration_budget=-1)

    def test_validate_seed_type(self):
        """测试非整数种子"""
        with pytest.raises(ConfigError, match="seed"):
            Config(seed="abc")
        with pytest.raises(ConfigError, match="seed"):
            Config(seed=True)

    def test_defaults_without_file(self):
        """测试找不到配置文件时使用内置默认值"""
        with patch.object(Config, '_find_config_file', return_value="/nonexistent/config.toml"):
            config = Config.load()
        assert config.seed == DEFAULTS["seed"]
        assert config.scaling == "lemma"

    def test_cache_dir_env_override(self):
        """测试 TRMT_CACHE_DIR 环境变量优先"""
        with tempfile.TemporaryDirectory() as temp_dir:
            with patch.dict(os.environ, {'TRMT_CACHE_DIR': temp_dir}):
                assert Config(cache_dir="/elsewhere").cache_dir == Path(temp_dir)

    def test_effective_threads(self):
        """测试线程数0表示全部核心"""
        assert Config(threads=3).effective_threads() == 3
        assert Config(threads=0).effective_threads() >= 1

    def test_to_dict_roundtrip(self):
        """测试 to_dict 可以重新构造同样的配置"""
        config = Config(seed=5, burn_in_factor=2.5)
        again = Config(**config.to_dict())
        assert again.to_dict() == config.to_dict()
        assert "effective_threads" in config.get_config_info()

    def test_load_default_config_path(self):
        """测试默认配置文件路径"""
        with tempfile.TemporaryDirectory() as temp_dir:
            config_path = Path(temp_dir) / "config.toml"
            config_path.write_text("[trmt]\nseed = 99\n", encoding='utf-8')
            with patch.dict(os.environ, {'TRMT_CONFIG_PATH': str(config_path)}):
                assert Config.get_config_path() == str(config_path)
                assert Config.load().seed == 99


class TestInstall:
    """示例配置写入测试类"""

    def test_example_config_loads(self):
        """测试写出的示例配置可以被加载"""
        with tempfile.TemporaryDirectory() as temp_dir:
            config_file = Path(temp_dir) / "sub" / "config.toml"
            assert write_example_config(config_file)
            assert not write_example_config(config_file)
            config = Config.load(str(config_file))
            assert config.seed == DEFAULTS["seed"]
            assert config.scaling == "lemma"

    def test_post_install_keeps_existing(self, capsys):
        """测试已有配置不会被覆盖"""
        with tempfile.TemporaryDirectory() as temp_dir:
            config_file = Path(temp_dir) / "config.toml"
            config_file.write_text("[trmt]\nseed = 7\n", encoding='utf-8')
            post_install(Path(temp_dir))
            assert "已存在" in capsys.readouterr().out
            assert Config.load(str(config_file)).seed == 7

    def test_example_config_scaling_comment(self):
        """测试示例配置中两种缩放的写法与 Scaling 一致"""
        assert "lemma (2√(N-2))" in EXAMPLE_CONFIG
        assert "theorem (√(4N))" in EXAMPLE_CONFIG
