"""
スタディ結果の診断

収束率の回帰、漸近正規性（共分散と KS 統計量）、受け入れ基準の判定
"""

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from errors import InsufficientReplicatesError, PreconditionError
from fisher.information import InfoMatrix
from model.types import Theta

if TYPE_CHECKING:
    from simulate.study import StudyReport

logger = logging.getLogger(__name__)

RATE_MIN_N_VALUES = 3
RATE_MIN_REPLICATES = 50
NORMALITY_MIN_REPLICATES = 100
KS_CRITICAL_COEFFICIENT = 1.36


def log_log_slope(n_values: Sequence[float], medians: Sequence[float]) -> float:
    """log(median) を log n に最小二乗回帰した傾き"""
    x = np.log(np.asarray(n_values, dtype=float))
    y = np.log(np.asarray(medians, dtype=float))
    if x.size < 2:
        raise InsufficientReplicatesError(f"回帰には2点以上が必要です: {x.size}")
    if not np.all(np.isfinite(y)):
        raise PreconditionError("中央値は正の有限値である必要があります")
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def rate_slope(report: "StudyReport", min_replicates: int = RATE_MIN_REPLICATES) -> float:
    """
    誤差中央値 median ‖θ̂_n − θ0‖ の log-log 傾き（√n 収束なら −1/2 付近）

    Raises:
        InsufficientReplicatesError: 集計済み反復が min_replicates 以上の n が3つ未満の場合
    """
    usable = [agg for agg in report.aggregates
              if agg.used >= min_replicates and agg.median_error is not None and agg.median_error > 0]
    if len({agg.n for agg in usable}) < RATE_MIN_N_VALUES:
        raise InsufficientReplicatesError(
            f"収束率の回帰には {min_replicates} 反復以上の n が {RATE_MIN_N_VALUES} 個以上必要です "
            f"(該当 {len(usable)} 個)"
        )
    return log_log_slope([agg.n for agg in usable], [agg.median_error for agg in usable])


@dataclass(frozen=True)
class NormalityDiagnostics:
    """√n(θ̂ − θ0) の漸近正規性の診断"""
    n: int
    count: int
    covariance: np.ndarray
    target: np.ndarray
    frobenius_distance: float
    ks_statistics: np.ndarray
    ks_critical: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "count": self.count,
            "covariance": self.covariance.tolist(),
            "target": self.target.tolist(),
            "frobenius_distance": self.frobenius_distance,
            "ks_statistics": self.ks_statistics.tolist(),
            "ks_critical": self.ks_critical,
        }


def normality_from_draws(draws: np.ndarray, target: np.ndarray, n: int = 0) -> NormalityDiagnostics:
    """
    標本 draws（形状 (M, 3)）の共分散と target の相対フロベニウス距離、
    および target の対角で標準化した各座標の KS 統計量
    """
    draws = np.asarray(draws, dtype=float)
    target = np.asarray(target, dtype=float)
    count = draws.shape[0]
    if count < 2:
        raise InsufficientReplicatesError(f"共分散の推定には2件以上が必要です: {count}")
    cov = np.cov(draws, rowvar=False)
    distance = float(np.linalg.norm(cov - target) / np.linalg.norm(target))
    standardized = draws / np.sqrt(np.diag(target))
    ks = np.array([stats.kstest(standardized[:, j], "norm").statistic for j in range(draws.shape[1])])
    return NormalityDiagnostics(
        n=n,
        count=count,
        covariance=cov,
        target=target,
        frobenius_distance=distance,
        ks_statistics=ks,
        ks_critical=KS_CRITICAL_COEFFICIENT / math.sqrt(count),
    )


def normality_diagnostics(report: "StudyReport", theta0: Theta, info: InfoMatrix,
                          min_replicates: int = NORMALITY_MIN_REPLICATES) -> NormalityDiagnostics:
    """
    最大の n における √n(θ̂ − θ0) の経験共分散と I(θ0)⁻¹ の比較

    Raises:
        InsufficientReplicatesError: 最大の n で集計可能な反復が min_replicates 未満の場合
    """
    n = max(agg.n for agg in report.aggregates)
    used = [r for r in report.records_for(n) if not r.is_flagged]
    if len(used) < min_replicates:
        raise InsufficientReplicatesError(
            f"正規性の診断には n={n} で {min_replicates} 反復以上が必要です (集計可能 {len(used)})"
        )
    truth = theta0.as_array()
    draws = math.sqrt(n) * np.vstack([r.theta_hat.as_array() - truth for r in used])
    return normality_from_draws(draws, info.inverse(), n=n)


@dataclass(frozen=True)
class AcceptanceTolerances:
    """受け入れ基準の許容値（パイロット実行で較正した値）"""
    rate_slope: Tuple[float, float] = (-0.6, -0.4)
    frobenius: float = 0.20
    ks: float = 0.08
    coverage: Tuple[float, float] = (0.92, 0.98)
    bvm_max: float = 0.25
    bayes_gap_max: float = 0.3
    posterior_mass_min: float = 0.99
    deleted_fraction_rel: float = 0.15
    failure_rate_max: float = 0.05
    error_inversions: int = 1


def _strictly_decreasing(values: List[float]) -> bool:
    return all(b < a for a, b in zip(values[:-1], values[1:]))


def _series(report: "StudyReport", name: str) -> Optional[List[float]]:
    values = [getattr(agg, name) for agg in report.aggregates]
    if any(v is None for v in values):
        return None
    return values


def check_acceptance(report: "StudyReport",
                     tolerances: Optional[AcceptanceTolerances] = None) -> List[str]:
    """
    受け入れ基準を判定し、満たさなかった基準の説明を返す（空なら合格）

    対象の値が存在しない基準（要求されていない出力など）は判定しない。
    """
    tol = tolerances or AcceptanceTolerances()
    violations: List[str] = []
    largest = report.aggregates[-1]

    for agg in report.aggregates:
        if agg.failure_rate > tol.failure_rate_max:
            violations.append(f"n={agg.n}: 失敗率 {agg.failure_rate:.3f} > {tol.failure_rate_max}")

    errors = _series(report, "median_error")
    if errors is not None:
        inversions = sum(1 for a, b in zip(errors[:-1], errors[1:]) if b > a)
        if inversions > tol.error_inversions:
            violations.append(f"誤差中央値の逆転が {inversions} 回あります")

    if report.rate_slope is not None:
        lo, hi = tol.rate_slope
        if not lo <= report.rate_slope <= hi:
            violations.append(f"収束率の傾き {report.rate_slope:.4f} が [{lo}, {hi}] の外です")

    if report.theta0 is not None and report.info0 is not None:
        try:
            diag = normality_diagnostics(report, report.theta0, report.info0)
        except InsufficientReplicatesError as e:
            logger.info(f"正規性の判定を省略: {e}")
        else:
            if diag.frobenius_distance > tol.frobenius:
                violations.append(f"共分散の相対距離 {diag.frobenius_distance:.4f} > {tol.frobenius}")
            for name, ks in zip(("gamma", "u", "sigma2"), diag.ks_statistics):
                if ks > tol.ks:
                    violations.append(f"KS 統計量 ({name}) {ks:.4f} > {tol.ks}")

    if largest.coverage is not None:
        lo, hi = tol.coverage
        for name, rate in zip(("gamma", "u", "sigma2"), largest.coverage):
            if not lo <= rate <= hi:
                violations.append(f"n={largest.n}: 被覆率 ({name}) {rate:.3f} が [{lo}, {hi}] の外です")

    bvm = _series(report, "median_bvm_l1_u")
    if bvm is not None:
        if not _strictly_decreasing(bvm):
            violations.append(f"BvM 距離の中央値が狭義減少していません: {bvm}")
        if bvm[-1] > tol.bvm_max:
            violations.append(f"n={largest.n}: BvM 距離の中央値 {bvm[-1]:.4f} > {tol.bvm_max}")

    bayes_gap = _series(report, "median_bayes_gap")
    if bayes_gap is not None:
        if not _strictly_decreasing(bayes_gap):
            violations.append(f"ベイズ推定量と最尤推定量の差が減少していません: {bayes_gap}")
        if bayes_gap[-1] > tol.bayes_gap_max:
            violations.append(f"n={largest.n}: ベイズ・最尤の差 {bayes_gap[-1]:.4f} > {tol.bayes_gap_max}")

    mass = _series(report, "median_posterior_mass")
    if mass is not None:
        if any(b < a for a, b in zip(mass[:-1], mass[1:])):
            violations.append(f"u0 近傍の事後確率が増加していません: {mass}")
        if mass[-1] < tol.posterior_mass_min:
            violations.append(f"n={largest.n}: u0 近傍の事後確率 {mass[-1]:.4f} < {tol.posterior_mass_min}")

    pseudo_gap = _series(report, "median_pseudo_gap")
    if pseudo_gap is not None and not _strictly_decreasing(pseudo_gap):
        violations.append(f"完全問題と擬似問題の差が減少していません: {pseudo_gap}")

    if largest.median_deleted_fraction is not None and largest.expected_deleted_fraction:
        rel = abs(largest.median_deleted_fraction / largest.expected_deleted_fraction - 1.0)
        if rel > tol.deleted_fraction_rel:
            violations.append(f"n={largest.n}: 削除割合の相対誤差 {rel:.3f} > {tol.deleted_fraction_rel}")

    for v in violations:
        logger.warning(f"受け入れ基準違反: {v}")
    return violations
