#!/usr/bin/env python3
"""安装后脚本

创建配置目录并写入示例配置文件，`trmt config init` 也使用这里的内容。
"""

from pathlib import Path
from typing import Optional

EXAMPLE_CONFIG = """# 锦标赛随机矩阵工具配置文件
# 请根据实际情况修改以下配置

[trmt]
# 根随机种子，所有随机性都由它派生
seed = 20180101

# 工作线程数，0 表示使用全部可用核心
threads = 0

# 日志级别: TRACE, DEBUG, INFO, SUCCESS, WARNING, ERROR, CRITICAL
log_level = "INFO"

# 默认缩放: lemma (2√(N-2)) 或 theorem (√(4N))
scaling = "lemma"

# 蒙特卡洛校准的样本数
calibration_budget = 10000

# 是否允许长时间任务(例如 N=9 的正则锦标赛枚举)
long_running = false

# 可选配置项
# # 普查缓存目录，环境变量 TRMT_CACHE_DIR 优先
# cache_dir = "~/.config/smalltrmt/cache"
#
# # 非回溯圈枚举的工作量上限
# enumeration_budget = 200000000
#
# # 精确条件矩的工作量上限 d_N·N³
# moment_budget = 5000000000
#
# # 预热步数系数，预热 = factor·d_N·ln(d_N)
# burn_in_factor = 10.0
"""


def write_example_config(config_file: Path, overwrite: bool = False) -> bool:
    """写入示例配置

    Args:
        config_file: 目标路径
        overwrite: 已存在时是否覆盖

    Returns:
        bool: 是否写入了文件
    """
    config_file.parent.mkdir(parents=True, exist_ok=True)
    if config_file.exists() and not overwrite:
        return False
    with open(config_file, 'w', encoding='utf-8') as f:
        f.write(EXAMPLE_CONFIG)
    return True


def post_install(config_dir: Optional[Path] = None) -> None:
    """安装后执行的脚本

    创建配置目录并写入示例配置文件。
    """
    # 获取用户配置目录
    config_dir = config_dir or Path.home() / ".config" / "smalltrmt"
    config_file = config_dir / "config.toml"

    if write_example_config(config_file):
        print("\n✅ 锦标赛随机矩阵工具安装成功！")
        print(f"\n📁 配置文件已创建: {config_file}")
        print("\n💡 使用以下命令查看配置文件位置:")
        print("   trmt config show")
        print("\n🚀 使用以下命令运行自检:")
        print("   trmt selftest")
    else:
        print("\n✅ 锦标赛随机矩阵工具安装成功！")
        print(f"\n📁 配置文件已存在: {config_file}")
        print("\n💡 使用 trmt config show 查看当前配置")


if __name__ == "__main__":
    post_install()
