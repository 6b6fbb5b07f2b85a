"""命令行接口模块

提供锦标赛随机矩阵工具的命令行接口。
主要功能：
- 采样矩阵与链轨迹
- 构建校准表、输出中心化统计量
- 圈恒等式、链动力学、Stein 方程与小 N 预言的验证
- 高斯收敛扫描与完整自检
- 配置文件管理
- 使用fire库处理命令行参数
"""

import os
import sys
from typing import Any, Callable, Optional, Sequence, Tuple, Union

import fire
from loguru import logger

from .__init__ import __version__
from .chebyshev import CalibrationTable, build_calibration, centred_statistics
from .config import Config, ConfigError
from .cycles import CENSUS_HEADER, census, cycle_sum_trace, identity_discrepancy
from .dynamics import exact_conditional_moments, extract_remainders, fit_remainder_scaling
from .ensemble import Ensemble, run_chain, sample_ensemble, sample_ite, seed_regular, write_trajectory
from .exceptions import NumericalFailureError, TrmtError
from .install import write_example_config
from .oracle import (
    EdgeSet,
    chain_census,
    edge_product_decay_fit,
    edge_product_expectation,
    enumerate_regular,
    mckay_integral_expectation,
    mckay_ratios,
)
from .output import emit, to_csv, to_json
from .rng import RngStream
from .selftest import run_selftest, stein_checks
from .stats import GaussDiagnostics, convergence_sweep

IDENTITY_TOLERANCE = 1e-8

_LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)


def _parse_grid(value: Union[str, int, Sequence[int]]) -> Tuple[int, ...]:
    """把 "8,12,16" 或 fire 解析出的元组转换成整数网格"""
    if isinstance(value, str):
        return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    if isinstance(value, int):
        return (value,)
    return tuple(int(v) for v in value)


def _parse_edges(value: Union[str, Sequence[str]]) -> EdgeSet:
    """把 "0-1,1-2" 或 fire 解析出的元组解析成边集"""
    if not isinstance(value, str):
        value = ",".join(str(v) for v in value)
    pairs = []
    for item in value.replace(" ", "").split(","):
        p, q = item.split("-")
        pairs.append((int(p), int(q)))
    return EdgeSet.of(*pairs)


class TrmtCLI:
    """锦标赛随机矩阵命令行工具

    全局参数是构造函数参数，例如:
        trmt --seed 7 --threads 4 identity --N 8 --n 4 --trials 20

    Args:
        seed: 根随机种子，默认取配置文件
        threads: 线程数，0 表示全部可用核心
        out: 输出路径，默认标准输出
        budget: 覆盖当前命令的预算(校准样本数、枚举或矩的工作量上限)
        scaling: theorem 或 lemma
        config: 自定义配置文件路径
    """

    def __init__(
        self,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        out: Optional[str] = None,
        budget: Optional[int] = None,
        scaling: Optional[str] = None,
        config: Optional[str] = None,
    ):
        """初始化CLI"""
        self._seed = seed
        self._threads = threads
        self._out = out
        self._budget = budget
        self._scaling = scaling
        self._config_path = config
        self._setup_logging(os.getenv("TRMT_LOG_LEVEL", "INFO"))
        logger.debug("锦标赛随机矩阵工具启动")

    def _setup_logging(self, level: str) -> None:
        """设置日志配置

        日志只写到 stderr 和日志文件，标准输出保留给结果。
        """
        # 移除默认的日志处理器
        logger.remove()

        logger.add(sys.stderr, format=_LOG_FORMAT, level=level)

        # 获取配置目录路径，确保目录存在
        config_dir = Config.get_default_config_dir()
        config_dir.mkdir(parents=True, exist_ok=True)

        # 添加文件日志，记录所有级别
        logger.add(
            str(config_dir / "trmt.log"),
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            level="DEBUG",
            rotation="10 MB",
            retention="7 days",
        )

    def _settings(self) -> Config:
        """加载配置并应用命令行覆盖"""
        app_config = Config.load(self._config_path)
        overrides = {}
        if self._seed is not None:
            overrides["seed"] = self._seed
        if self._threads is not None:
            overrides["threads"] = self._threads
        if self._scaling is not None:
            overrides["scaling"] = self._scaling
        if overrides:
            values = app_config.to_dict()
            values.update(overrides)
            app_config = Config(**values)
        if app_config.log_level != os.getenv("TRMT_LOG_LEVEL", "INFO"):
            self._setup_logging(app_config.log_level)
        return app_config

    def _run(self, name: str, action: Callable[[Config], Any]) -> Any:
        """执行一个命令，统一处理错误与退出码"""
        try:
            return action(self._settings())
        except ConfigError as e:
            logger.error(f"配置错误: {e}")
            print(f"❌ 配置错误: {e}")
            sys.exit(1)
        except NumericalFailureError as e:
            logger.error(f"{name} 数值失败: {e}")
            print(to_json({"error": "numerical-failure", "command": name, "message": str(e), "diagnostic": e.diagnostic}))
            sys.exit(1)
        except TrmtError as e:
            logger.error(f"{name} 失败: {e}")
            print(f"❌ {name} 失败: {e}")
            sys.exit(1)
        except Exception as e:
            logger.error(f"未知错误: {e}")
            print(f"❌ 未知错误: {e}")
            sys.exit(1)

    def _emit(self, text: str) -> None:
        emit(text, self._out)

    def sample(self, ensemble: str = "ite", N: int = 5, count: int = 1, steps: int = 0, thin: int = 1) -> None:
        """输出系综样本或链轨迹(NDJSON)

        Args:
            ensemble: ite 或 rite
            N: 矩阵维度
            count: 独立样本数(steps=0 时)
            steps: 大于0时输出一条链轨迹，预热后再走 steps 步
            thin: 轨迹输出间隔

        Examples:
            trmt sample --ensemble rite --N 7 --count 10
            trmt sample --ensemble rite --N 7 --steps 1000 --thin 100
        """

        def action(cfg: Config) -> None:
            kind = Ensemble.parse(ensemble)
            rng = RngStream(cfg.seed).child("sample")
            if steps > 0:
                H0 = seed_regular(N) if kind is Ensemble.RITE else sample_ite(N, rng.child("start"))
                states = run_chain(H0, kind, steps, rng.child("chain"), thin=thin, burn_in_factor=cfg.burn_in_factor)
            else:
                states = sample_ensemble(kind, N, count, rng, burn_in_factor=cfg.burn_in_factor)
            logger.info(f"输出 {len(states)} 个 {kind.value} 矩阵")
            self._emit(write_trajectory(states))

        self._run("sample", action)

    def calibrate(self, ensemble: str = "ite", N: int = 5, k_max: int = 4, exact: Optional[bool] = None) -> None:
        """构建校准表(JSON)

        小 N 用全枚举，其余用 --budget 个蒙特卡洛样本(默认取配置)。

        Examples:
            trmt calibrate --ensemble rite --N 7 --k_max 4
            trmt --budget 20000 calibrate --N 21
        """

        def action(cfg: Config) -> None:
            budget = self._budget or cfg.calibration_budget
            table = build_calibration(
                ensemble, N, k_max, budget, RngStream(cfg.seed), cfg.scaling,
                cfg.effective_threads(), cfg.burn_in_factor, exact,
            )
            self._emit(to_json(table.to_json()) + "\n")

        self._run("calibrate", action)

    def traces(
        self, ensemble: str = "ite", N: int = 5, count: int = 100, k_max: int = 4, calibration: Optional[str] = None
    ) -> None:
        """输出中心化统计量 Y_2..Y_k (CSV)

        Args:
            calibration: 已保存的校准表路径，默认现场构建

        Examples:
            trmt traces --ensemble rite --N 11 --count 500
        """

        def action(cfg: Config) -> None:
            rng = RngStream(cfg.seed)
            if calibration:
                table = CalibrationTable.load(calibration)
            else:
                table = build_calibration(
                    ensemble, N, k_max, self._budget or cfg.calibration_budget, rng,
                    cfg.scaling, cfg.effective_threads(), cfg.burn_in_factor,
                )
            states = sample_ensemble(ensemble, N, count, rng.child("traces"), burn_in_factor=cfg.burn_in_factor)
            header = ["sample"] + [f"Y_{n}" for n in range(2, k_max + 1)]
            rows = []
            for index, H in enumerate(states):
                Y = centred_statistics(H, table, k_max)
                rows.append([index] + [Y.y(n) for n in range(2, k_max + 1)])
            self._emit(to_csv(header, rows))

        self._run("traces", action)

    def identity(self, N: int = 8, n: int = 4, trials: int = 20, ensemble: str = "ite") -> None:
        """圈求和迹与特征值迹的比对

        Examples:
            trmt identity --N 8 --n 4 --trials 20
        """

        def action(cfg: Config) -> None:
            budget = self._budget or cfg.enumeration_budget
            states = sample_ensemble(ensemble, N, trials, RngStream(cfg.seed).child("identity"), burn_in_factor=cfg.burn_in_factor)
            worst = 0.0
            for H in states:
                worst = max(worst, identity_discrepancy(H, n, budget, cfg.effective_threads()))
            result = {
                "ensemble": Ensemble.parse(ensemble).value,
                "N": N,
                "n": n,
                "trials": trials,
                "example_trace": cycle_sum_trace(states[0], n, budget) if states else None,
                "max_discrepancy": worst,
                "tolerance": IDENTITY_TOLERANCE,
                "pass": worst < IDENTITY_TOLERANCE,
            }
            self._emit(to_json(result) + "\n")
            if worst >= IDENTITY_TOLERANCE:
                logger.error(f"圈恒等式偏差 {worst} 超过 {IDENTITY_TOLERANCE}")
                sys.exit(1)

        self._run("identity", action)

    def dynamics(
        self,
        ensemble: str = "ite",
        N: Optional[int] = None,
        N_grid: Optional[str] = None,
        k_max: int = 3,
        samples: int = 20,
        which: str = "R_n",
        indices: Union[str, int, Sequence[int]] = 2,
    ) -> None:
        """精确条件矩与余项标度拟合(JSON)

        给出 --N 时输出一个样本的漂移、扩散与余项；
        给出 --N_grid 时拟合 mean|R| 随 N 的指数。

        Examples:
            trmt dynamics --ensemble ite --N 8
            trmt dynamics --ensemble rite --N_grid 11,15,21,31 --samples 20
        """

        def action(cfg: Config) -> None:
            budget = self._budget or cfg.moment_budget
            rng = RngStream(cfg.seed).child("dynamics")
            if N_grid is not None:
                fit = fit_remainder_scaling(
                    ensemble, which, _parse_grid(indices), _parse_grid(N_grid), samples, rng,
                    calibration_budget=cfg.calibration_budget, budget=budget, threads=cfg.effective_threads(),
                )
                self._emit(to_json(fit.to_json()) + "\n")
                return
            size = N or 5
            H = sample_ensemble(ensemble, size, 1, rng.child("state"), burn_in_factor=cfg.burn_in_factor)[0]
            table = build_calibration(
                ensemble, size, k_max, cfg.calibration_budget, rng.child("calibration"),
                "lemma", cfg.effective_threads(), cfg.burn_in_factor,
            )
            moments = exact_conditional_moments(H, ensemble, k_max, budget, cfg.effective_threads())
            remainders = extract_remainders(moments, centred_statistics(H, table, k_max))
            payload = {
                "ensemble": moments.ensemble.value,
                "N": size,
                "k_max": k_max,
                "normalizer": moments.normalizer,
                "moves": moments.moves,
                "drift": moments.drift,
                "diffusion": moments.diffusion,
                "R_n": remainders.R_n,
                "R_nm": remainders.R_nm,
                "R_nml_sum": float(remainders.R_nml.sum()),
            }
            self._emit(to_json(payload) + "\n")

        self._run("dynamics", action)

    def stein(self, points: int = 20, samples: int = 20_000) -> None:
        """Stein 方程与 OU 半群的数值检验(JSON)

        Examples:
            trmt stein --points 20
        """

        def action(cfg: Config) -> None:
            checks = stein_checks(RngStream(cfg.seed).child("stein"), points, samples)
            self._emit(to_json([c.to_json() for c in checks]) + "\n")
            if not all(c.passed for c in checks):
                sys.exit(1)

        self._run("stein", action)

    def oracle(
        self,
        regular_count: Optional[int] = None,
        mckay: Optional[str] = None,
        chain: Optional[int] = None,
        steps: int = 1_000_000,
        edges: Optional[str] = None,
        N: int = 5,
        mode: str = "exact",
        cycle_census: Optional[int] = None,
        L: int = 6,
        decay: Optional[str] = None,
    ) -> None:
        """小 N 预言：计数、McKay 比值、链普查、E[H_E]、衰减指数与圈普查

        Examples:
            trmt oracle --regular-count 5          # 输出 24
            trmt oracle --mckay 5,7
            trmt oracle --chain 5 --steps 1000000
            trmt oracle --edges 0-1,2-3 --N 5 --mode integral
            trmt oracle --decay 5,7,9,11,13 --edges 0-1,1-2
            trmt oracle --cycle-census 5 --L 6
        """

        def action(cfg: Config) -> None:
            if regular_count is not None:
                census_ = enumerate_regular(
                    int(regular_count), long_running=cfg.long_running, cache_dir=cfg.cache_dir,
                    threads=cfg.effective_threads(),
                )
                self._emit(f"{census_.count}\n")
                return
            if mckay is not None:
                self._emit(to_json(mckay_ratios(_parse_grid(mckay), cfg.long_running, cfg.cache_dir)) + "\n")
                return
            if chain is not None:
                result = chain_census(int(chain), steps, RngStream(cfg.seed).child("oracle-chain"), cfg.burn_in_factor)
                self._emit(to_json(result.to_json()) + "\n")
                return
            if decay is not None:
                fit = edge_product_decay_fit(
                    _parse_grid(decay), _parse_edges(edges or "0-1,1-2"), RngStream(cfg.seed).child("oracle-decay"),
                    self._budget or cfg.calibration_budget, burn_in_factor=cfg.burn_in_factor,
                )
                self._emit(to_json(fit.to_json()) + "\n")
                return
            if edges is not None:
                E = _parse_edges(edges)
                rng = RngStream(cfg.seed).child("oracle-edges")
                if mode == "integral":
                    estimate = mckay_integral_expectation(N, E, rng=rng)
                else:
                    estimate = edge_product_expectation(
                        N, E, mode, self._budget or cfg.calibration_budget, rng, burn_in_factor=cfg.burn_in_factor
                    )
                self._emit(to_json(estimate.to_json()) + "\n")
                return
            if cycle_census is not None:
                counts = census(int(cycle_census), L, self._budget or cfg.enumeration_budget)
                self._emit(to_csv(CENSUS_HEADER, [counts.row()]))
                return
            raise TrmtError("请指定 --regular-count、--mckay、--chain、--edges、--decay 或 --cycle-census 之一")

        self._run("oracle", action)

    def gauss(self, ensemble: str = "ite", N_grid: str = "11,21,41", samples: int = 500, k_max: int = 3) -> None:
        """高斯收敛扫描(CSV)，趋势检验写入 <out>.summary.json

        Examples:
            trmt gauss --ensemble rite --N_grid 21,51,101 --samples 3000
        """

        def action(cfg: Config) -> None:
            sweep = convergence_sweep(
                ensemble, _parse_grid(N_grid), samples, k_max, RngStream(cfg.seed).child("gauss"),
                cfg.scaling, self._budget or cfg.calibration_budget, cfg.effective_threads(),
                burn_in_factor=cfg.burn_in_factor,
            )
            self._emit(to_csv(GaussDiagnostics.CSV_HEADER, sweep.rows()))
            summary = to_json(sweep.summary()) + "\n"
            if self._out:
                emit(summary, f"{self._out}.summary.json")
            else:
                logger.info(f"趋势检验: {summary}")

        self._run("gauss", action)

    def selftest(self, level: str = "quick", only: Optional[str] = None) -> None:
        """运行完整的性质自检(JSON)

        Args:
            level: quick 或 full
            only: 逗号分隔的分组名，例如 census,stein

        Examples:
            trmt selftest
            trmt --seed 1 selftest --level full
        """

        def action(cfg: Config) -> None:
            groups = [g for g in str(only).split(",") if g] if only else None
            report = run_selftest(cfg.seed, level, cfg.effective_threads(), cfg.long_running, groups)
            self._emit(to_json(report.to_json()) + "\n")
            if not report.passed:
                logger.error(f"自检未通过: {[c.name for c in report.failures()]}")
                sys.exit(1)

        self._run("selftest", action)

    def version(self) -> None:
        """显示版本信息

        Examples:
            trmt version
        """
        print(f"锦标赛随机矩阵工具 v{__version__}")
        print("随机锦标赛系综谱统计的模拟与验证工具")

    def config(self, action: str = "show") -> None:
        """配置文件管理

        Args:
            action: 操作类型，支持 show, init, path

        Examples:
            trmt config show    # 显示当前配置
            trmt config init    # 初始化配置文件
            trmt config path    # 显示配置文件路径
        """
        if action == "show":
            self._config_show()
        elif action == "init":
            self._config_init()
        elif action == "path":
            self._config_path()
        else:
            print("❌ 不支持的操作")
            print("支持的操作: show, init, path")
            sys.exit(1)

    def _config_show(self) -> None:
        """显示当前配置"""
        try:
            config_path = self._config_path_or_default()
            print(f"\n📁 配置文件路径: {config_path}")
            if not os.path.exists(config_path):
                print("⚠️  配置文件不存在，使用内置默认值")
                print("💡 使用 'trmt config init' 初始化配置文件")

            config_info = self._settings().get_config_info()
            print("\n=== 实验配置 ===")
            for key in sorted(config_info):
                print(f"{key}: {config_info[key]}")
            print()

        except ConfigError as e:
            logger.error(f"配置错误: {e}")
            print(f"❌ 配置错误: {e}")
            sys.exit(1)
        except Exception as e:
            logger.error(f"未知错误: {e}")
            print(f"❌ 未知错误: {e}")
            sys.exit(1)

    def _config_init(self) -> None:
        """初始化配置文件"""
        try:
            config_file = Config.get_default_config_dir() / "config.toml"
            overwrite = False
            if config_file.exists():
                print(f"⚠️  配置文件已存在: {config_file}")
                response = input("是否覆盖现有配置文件? (y/N): ")
                if response.lower() not in ['y', 'yes']:
                    print("取消初始化")
                    return
                overwrite = True

            write_example_config(config_file, overwrite=overwrite)
            print(f"✅ 配置文件已创建: {config_file}")
            print("\n🚀 使用以下命令运行自检:")
            print("   trmt selftest")

        except Exception as e:
            logger.error(f"初始化配置文件失败: {e}")
            print(f"❌ 初始化配置文件失败: {e}")
            sys.exit(1)

    def _config_path(self) -> None:
        """显示配置文件路径"""
        try:
            config_path = self._config_path_or_default()
            config_dir = str(Config.get_default_config_dir())

            print(f"\n📁 当前配置文件路径: {config_path}")
            print(f"📂 默认配置目录: {config_dir}")

            if os.path.exists(config_path):
                print("✅ 配置文件存在")
            else:
                print("❌ 配置文件不存在")
                print("💡 使用 'trmt config init' 初始化配置文件")

            print("\n🔍 配置文件查找顺序:")
            print("  1. 环境变量 TRMT_CONFIG_PATH")
            print(f"  2. {os.path.join(config_dir, 'config.toml')} (推荐)")
            print("  3. ./config.toml (当前目录)")
            print()

        except Exception as e:
            logger.error(f"获取配置路径失败: {e}")
            print(f"❌ 获取配置路径失败: {e}")
            sys.exit(1)

    def _config_path_or_default(self) -> str:
        return self._config_path or Config.get_config_path()


def main():
    """命令行入口点"""
    try:
        fire.Fire(TrmtCLI)
    except KeyboardInterrupt:
        print("\n❌ 操作被用户中断")
        sys.exit(1)
    except Exception as e:
        logger.error(f"程序异常退出: {e}")
        print(f"❌ 程序异常退出: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
