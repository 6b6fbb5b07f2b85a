"""锦标赛随机矩阵工具包

这个包提供了一组命令行工具和Python接口，用于模拟和验证
随机锦标赛系综(ITE)与正则随机锦标赛系综(RITE)的谱统计。
主要功能：
- 锦标赛矩阵的采样与马尔可夫链
- 切比雪夫迹统计量与校准表
- 非回溯环迹恒等式
- 漂移/扩散的精确条件矩
- Stein方程与OU过程的数值验证
- 小N穷举预言机
"""

__version__ = "0.1.0"
__author__ = "LAD021"
