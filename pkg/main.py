"""
折れ線（ホッケースティック）回帰の推定・検証メインプログラム

fit: CSV データの最尤推定とワルド区間
posterior: 事後分布グリッド・ベイズ推定量・BvM 距離
study: モンテカルロ検証スタディ
"""

# パス設定を最初に行う
import sys
from pathlib import Path

# srcディレクトリをパスに追加（インポート前に実行）
project_root = Path(__file__).parent
src_path = project_root / "src"
sys.path.insert(0, str(src_path))

import argparse
import json
import logging
import time
from dataclasses import replace
from typing import List, Optional

import numpy as np

# 設定
from config.scenario import (
    AppConfig, build_domain, build_prior, build_scenario, build_tolerances, load_config, parse_config,
)
from config.settings import settings
from errors import HockeyStickError, SingularInformationError

# 各パッケージの処理
from estimate.profile import fit_mle
from fisher.information import empirical_information
from fisher.wald import PARAMETER_NAMES, wald_interval
from model.ingest import read_dataset_csv
from model.types import Domain
from posterior.bvm import bvm_l1_u
from posterior.conjugate import bayes_estimator, default_u_nodes, sample_posterior, u_marginal_log_posterior
from report.writer import (
    convert_grid_to_rows, get_draws_header_row, get_grid_header_row, to_jsonable, write_csv_atomic,
    write_json_atomic, write_study_report,
)
from simulate.diagnostics import check_acceptance, normality_diagnostics
from simulate.study import run_study

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_DEGENERATE = 2
EXIT_ACCEPTANCE = 3
EXIT_INTERRUPTED = 130

WALD_LEVEL = 0.95


def setup_logging(level: Optional[str] = None):
    """ログ設定を初期化"""
    log_dir = settings.log_dir
    log_dir.mkdir(parents=True, exist_ok=True)

    log_filename = log_dir / f"hockey_stick_{time.strftime('%Y%m%d_%H%M%S')}.log"

    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_filename, encoding='utf-8'),
            logging.StreamHandler()
        ]
    )

    # サードパーティライブラリのログレベルを調整
    logging.getLogger('joblib').setLevel(logging.WARNING)
    logging.getLogger('numba').setLevel(logging.WARNING)
    logging.getLogger('matplotlib').setLevel(logging.WARNING)

    return logging.getLogger(__name__)


def _emit_json(payload: dict, output: Optional[str]) -> None:
    """--output があればファイルへ、無ければ標準出力へ JSON を書く"""
    if output:
        write_json_atomic(output, payload)
    else:
        print(json.dumps(to_jsonable(payload), ensure_ascii=False, indent=2))


def _resolve_output_dir(args_output: Optional[str], config: AppConfig) -> Path:
    if args_output:
        return Path(args_output)
    if config.output.dir:
        return Path(config.output.dir)
    return settings.output_dir


def _resolve_seed(args_seed: Optional[int], config: AppConfig) -> int:
    if args_seed is not None:
        return args_seed
    if config.seed is not None:
        return config.seed
    return settings.seed


def cmd_fit(args, logger) -> int:
    """CSV データの最尤推定"""
    domain = None
    if args.u_lower is not None or args.u_upper is not None:
        if args.u_lower is None or args.u_upper is None:
            logger.error("--u-lower と --u-upper は両方指定してください")
            return EXIT_INPUT_ERROR
        domain = Domain(u_lower=args.u_lower, u_upper=args.u_upper)

    data = read_dataset_csv(args.csv, domain)
    fit = fit_mle(data)

    payload = fit.to_dict()
    payload["level"] = WALD_LEVEL
    payload["wald"] = None
    if not fit.is_flagged:
        try:
            intervals = wald_interval(fit, data, WALD_LEVEL)
            payload["wald"] = {name: list(bounds) for name, bounds in zip(PARAMETER_NAMES, intervals)}
        except SingularInformationError as e:
            logger.warning(f"ワルド区間を省略: {e}")

    _emit_json(payload, args.output)

    if fit.is_flagged:
        logger.warning(f"退化した推定結果です: {sorted(fit.flags)}")
        return EXIT_DEGENERATE
    logger.info(f"推定完了: γ̂={fit.theta_hat.gamma:.6g}, û={fit.theta_hat.u:.6g}, σ̂²={fit.theta_hat.sigma2:.6g}")
    return EXIT_OK


def cmd_posterior(args, logger) -> int:
    """事後分布グリッド・ベイズ推定量・BvM 距離"""
    config = load_config(args.config) if args.config else parse_config({})
    domain = build_domain(config) if args.config else None
    data = read_dataset_csv(args.csv, domain)
    prior = replace(build_prior(config), domain=data.domain)
    seed = _resolve_seed(args.seed, config)
    draws = config.posterior.draws if args.draws is None else args.draws

    fit = fit_mle(data)
    if fit.is_flagged:
        logger.error(f"退化した推定結果では事後分布の中心を決められません: {sorted(fit.flags)}")
        return EXIT_DEGENERATE

    grid = u_marginal_log_posterior(data, prior, default_u_nodes(fit, data.domain))
    summary = bayes_estimator(grid, data, prior)
    info = empirical_information(fit.theta_hat, data)
    distance = bvm_l1_u(grid, fit, info, data.n, domain=data.domain)
    summary = replace(summary, bvm_l1_u=distance)

    out_dir = _resolve_output_dir(args.output, config)
    write_csv_atomic(out_dir / config.posterior.grid_csv, get_grid_header_row(), convert_grid_to_rows(grid))
    if draws > 0:
        samples = sample_posterior(grid, data, prior, draws, seed)
        summary = replace(summary, samples=samples)
        write_csv_atomic(out_dir / config.posterior.draws_csv, get_draws_header_row(), samples.tolist())

    payload = {
        "n": data.n,
        "seed": seed,
        "posterior": summary.to_dict(),
        "mle": fit.to_dict(),
        "grid_nodes": int(grid.u_nodes.size),
    }
    write_json_atomic(out_dir / config.posterior.summary_json, payload)
    logger.info(f"事後分析完了: θ̃={summary.theta_bayes}, BvM 距離 {distance:.4f}")
    return EXIT_OK


def _format_cell(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def print_study_table(report) -> None:
    """n ごとの要約表を標準出力へ"""
    target = None if report.info0 is None else report.info0.inverse()
    print(f"{'n':>8} {'med_err':>10} {'cov_dist':>10} {'bvm_med':>10} {'gap_med':>10} {'fail':>6}")
    for agg in report.aggregates:
        cov_dist = None
        if target is not None and agg.cov_sqrt_n is not None:
            cov_dist = float(np.linalg.norm(np.asarray(agg.cov_sqrt_n) - target) / np.linalg.norm(target))
        print(f"{agg.n:>8} {_format_cell(agg.median_error):>10} {_format_cell(cov_dist):>10} "
              f"{_format_cell(agg.median_bvm_l1_u):>10} {_format_cell(agg.median_bayes_gap):>10} "
              f"{agg.failed + agg.flagged:>6}")
    if report.rate_slope is not None:
        print(f"rate_slope = {report.rate_slope:.4f}")


def cmd_study(args, logger) -> int:
    """モンテカルロ検証スタディ"""
    config = load_config(args.config)
    scenario = build_scenario(config, seed=args.seed)
    workers = args.workers or config.workers or settings.workers

    report = run_study(scenario, workers=workers)

    extra = {}
    if report.info0 is not None:
        try:
            extra["diagnostics"] = {"normality": normality_diagnostics(report, report.theta0, report.info0).to_dict()}
        except HockeyStickError as e:
            logger.info(f"正規性の診断を省略: {e}")

    out_dir = _resolve_output_dir(args.output, config)
    csv_path = out_dir / config.output.records_csv if config.output.records_csv else None
    write_study_report(report, out_dir / config.output.report_json, csv_path, extra=extra)
    print_study_table(report)

    if args.check:
        violations = check_acceptance(report, build_tolerances(config))
        if violations:
            for v in violations:
                print(f"NG: {v}", file=sys.stderr)
            return EXIT_ACCEPTANCE
        logger.info("受け入れ基準をすべて満たしました")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="乱数シード")
    common.add_argument("--workers", type=int, default=None, help="並列ワーカー数")
    common.add_argument("--output", default=None, help="出力先（fit はファイル、その他はディレクトリ）")
    common.add_argument("--log-level", default=None, help="ログレベル")

    parser = argparse.ArgumentParser(description="折れ線回帰の推定とモンテカルロ検証")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", parents=[common], help="最尤推定とワルド区間")
    p_fit.add_argument("csv", help="観測データ CSV (t,x)")
    p_fit.add_argument("--u-lower", type=float, default=None, help="定義域の下端")
    p_fit.add_argument("--u-upper", type=float, default=None, help="定義域の上端")
    p_fit.set_defaults(handler=cmd_fit)

    p_post = sub.add_parser("posterior", parents=[common], help="事後分布とベイズ推定量")
    p_post.add_argument("csv", help="観測データ CSV (t,x)")
    p_post.add_argument("--config", default=None, help="YAML 設定ファイル")
    p_post.add_argument("--draws", type=int, default=None, help="事後サンプル数")
    p_post.set_defaults(handler=cmd_posterior)

    p_study = sub.add_parser("study", parents=[common], help="モンテカルロ検証スタディ")
    p_study.add_argument("--config", required=True, help="YAML シナリオ設定ファイル")
    p_study.add_argument("--check", action="store_true", help="受け入れ基準を判定する")
    p_study.set_defaults(handler=cmd_study)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """メイン関数"""
    args = build_parser().parse_args(argv)
    logger = setup_logging(args.log_level)

    try:
        if args.workers is not None and args.workers < 1:
            logger.error(f"--workers は 1 以上が必要です: {args.workers}")
            return EXIT_INPUT_ERROR
        logger.info(f"コマンド開始: {args.command}")
        return args.handler(args, logger)

    except KeyboardInterrupt:
        logger.info("ユーザーによって処理が中断されました")
        return EXIT_INTERRUPTED
    except FileNotFoundError as e:
        logger.error(f"ファイルが見つかりません: {e}")
        return EXIT_INPUT_ERROR
    except (HockeyStickError, ValueError, ArithmeticError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INPUT_ERROR
    except Exception as e:
        logger.error(f"予期しないエラー: {e}", exc_info=True)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    exit(main())
