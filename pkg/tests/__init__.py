"""测试模块

包含锦标赛随机矩阵工具的所有测试用例。
"""