#!/usr/bin/env python3
"""
随机Burgers无粘极限分析工具 - 命令行入口

子命令: geometry | turbulence | shock | viscous | mass | verify-all
退出码: 0 成功, 1 用法错误, 2 场景错误, 3 数值失败, 4 验收失败
"""

import sys
import argparse
from pathlib import Path
from typing import Dict, List, Optional

# 添加项目根目录到路径
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from core.errors import EXIT_USAGE, exit_code_for  # noqa: E402
from main_controller import COMMANDS, OUTPUT_ENV, BurgersAnalysisController, RunConfig, RunResult  # noqa: E402


class _Parser(argparse.ArgumentParser):
    """用法错误统一返回退出码 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: 错误: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="随机Burgers方程无粘极限奇异几何分析工具",
                     epilog=f"输出目录缺省取环境变量 {OUTPUT_ENV}，其次为配置文件 output.directory")
    parser.add_argument("--config", default=str(project_root / "config.yaml"), help="配置文件路径")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    helps = {
        'geometry': "焦散、等值面、Maxwell集与尖点定理",
        'turbulence': "ζ 过程零点与回归统计",
        'shock': "Maxwell集上的速度、涡量与涡线",
        'viscous': "粘性参照解与半经典比较",
        'mass': "质量粘附：积分与粒子蒙特卡洛",
        'verify-all': "全部验收检查",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--scenario", required=True, help="场景文件路径或内置场景名")
        p.add_argument("--t", dest="t_values", type=float, nargs="*", default=None,
                       help="时刻列表（给出空列表时不做计算）")
        p.add_argument("--c", dest="c_values", type=float, nargs="*", default=[], help="等值面/ζ 的水平值")
        p.add_argument("--eps", type=float, default=None, help="覆盖场景的噪声强度")
        p.add_argument("--seeds", type=int, nargs="+", default=[0], help="随机种子")
        p.add_argument("--seed-base", type=int, default=None, help="按 --n-paths 连续编号的起始种子")
        p.add_argument("--output", default=None, help="结果目录")
        p.add_argument("--cusp-tol", type=float, default=None, help="尖点判定阈值")
        p.add_argument("--tie-tol", type=float, default=None, help="作用量相等的判定阈值")
        p.add_argument("--horizon", type=float, default=None, help="路径时间范围（turbulence）")
        p.add_argument("--dt", type=float, default=None, help="路径步长（turbulence）")
        p.add_argument("--n-paths", type=int, default=None, help="路径条数（turbulence）")
        p.add_argument("--mu", dest="mu_list", type=float, nargs="+", default=None, help="粘性 μ 列表（viscous）")
        p.add_argument("--particles", dest="n_particles", type=int, default=None, help="粒子数（mass）")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Dict]:
    """命令行阈值覆盖配置文件"""
    overrides: Dict[str, Dict] = {}
    if args.cusp_tol is not None:
        overrides.setdefault('geometry', {})['cusp_tol'] = args.cusp_tol
    if args.tie_tol is not None:
        overrides.setdefault('scenario', {})['action_tie_tol'] = args.tie_tol
    return overrides


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    seeds: List[int] = [args.seed_base] if args.seed_base is not None else list(args.seeds)
    return RunConfig(command=args.command, scenario=args.scenario, t_values=args.t_values,
                     c_values=list(args.c_values), eps=args.eps, seeds=seeds, output=args.output,
                     overrides=overrides_from_args(args), horizon=args.horizon, dt=args.dt,
                     n_paths=args.n_paths, mu_list=args.mu_list, n_particles=args.n_particles)


def run(rc: RunConfig, config_path: str = "config.yaml") -> RunResult:
    """执行一次运行，返回退出码与结果清单"""
    controller = BurgersAnalysisController(config_path, rc.overrides)

    def progress_callback(message):
        print(f"[进度] {message}")

    controller.enable_monitoring(progress_callback)
    try:
        return controller.run(rc)
    finally:
        controller.cleanup()


def print_result(result: RunResult):
    print("\n" + "=" * 60)
    for check in result.checks:
        mark = "✅" if check.passed else "❌"
        print(f"{mark} {check.name}: {check.value:.6g} {check.detail}".rstrip())
    if result.exit_code == 0:
        print(f"✅ {result.command} 完成: {result.message}")
    else:
        print(f"❌ {result.command} 失败 (退出码 {result.exit_code}): {result.message}")
    print(f"📁 结果目录: {result.output_dir}")
    print(f"⏱  用时 {result.elapsed:.1f} 秒")
    print("=" * 60)


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = run_config_from_args(args)
    except Exception as e:
        print(f"❌ 参数错误: {e}", file=sys.stderr)
        return exit_code_for(e)

    result = run(rc, args.config)
    print_result(result)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
