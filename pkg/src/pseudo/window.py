"""
擬似問題：真の屈折点まわりの縮小窓内の観測削除

真の u0 が必要なためシミュレーション専用。実データでは u0 は未知であり、
この削除は実際には行えない。
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from config.settings import settings
from errors import EmptyPseudoDatasetError, FlaggedFitError, PreconditionError
from estimate.profile import FitResult, fit_mle
from model.types import Dataset, Domain

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowRule:
    """
    窓幅 d_n の規則

    kind="power": d_n = scale·n^{−α}（0 < α < 1/2）
    kind="loginv": d_n = scale / log n
    どちらも d_n → 0 かつ n^{−1/2}(log n)/d_n → 0 を満たす。
    """
    kind: str = "power"
    alpha: float = 0.25
    scale: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("power", "loginv"):
            raise PreconditionError(f"未対応の窓規則です: {self.kind}")
        if self.kind == "power" and not 0 < self.alpha < 0.5:
            raise PreconditionError(
                f"power 規則は 0 < α < 1/2 が必要です（α ≥ 1/2 では n^(-1/2)·log n / d_n → 0 を満たさない）: {self.alpha}"
            )
        if self.scale is None:
            object.__setattr__(self, "scale", settings.window_scale)
        if not self.scale > 0:
            raise PreconditionError(f"窓幅の倍率は正である必要があります: {self.scale}")

    def width(self, n: int) -> float:
        """d_n"""
        if n < 2:
            raise PreconditionError(f"窓幅の計算には n ≥ 2 が必要です: {n}")
        if self.kind == "power":
            return self.scale * n ** (-self.alpha)
        return self.scale / math.log(n)


@dataclass(frozen=True)
class PseudoDataset:
    """擬似問題のデータ（n* 観測）と削除数 n**"""
    kept: Dataset
    deleted_count: int
    window: Tuple[float, float]

    @property
    def deleted_fraction(self) -> float:
        return self.deleted_count / (self.kept.n + self.deleted_count)


def pseudo_delete(data: Dataset, u0: float, rule: WindowRule) -> PseudoDataset:
    """
    開区間 (u0 − d_n/2, u0 + d_n/2) 内の観測を削除する

    Raises:
        PreconditionError: u0 が定義域外の場合
        EmptyPseudoDatasetError: 全観測が削除された場合
    """
    if not data.domain.contains(u0):
        raise PreconditionError(f"u0 が定義域の外にあります: {u0}")
    half = 0.5 * rule.width(data.n)
    window = (u0 - half, u0 + half)
    inside = (data.t > window[0]) & (data.t < window[1])
    deleted = int(inside.sum())
    if deleted == data.n:
        raise EmptyPseudoDatasetError(f"窓 {window} が全観測を削除しました (n={data.n})")

    logger.debug(f"擬似問題: 窓 ({window[0]:.6g}, {window[1]:.6g}) で {deleted}/{data.n} 観測を削除")
    return PseudoDataset(kept=data.subset(~inside), deleted_count=deleted, window=window)


def pseudo_problem(data: Dataset, u0: float, rule: WindowRule,
                   domain: Optional[Domain] = None) -> Tuple[PseudoDataset, FitResult]:
    """削除後のデータとその最尤推定 θ̂*（n** を付記）の組"""
    pseudo = pseudo_delete(data, u0, rule)
    fit = fit_mle(pseudo.kept, domain)
    return pseudo, replace(fit, n_deleted=pseudo.deleted_count)


def fit_pseudo(data: Dataset, u0: float, rule: WindowRule, domain: Optional[Domain] = None) -> FitResult:
    """
    擬似問題の最尤推定 θ̂*（結果に n*, n** を付記）
    """
    _, fit = pseudo_problem(data, u0, rule, domain)
    return fit


def mle_gap(full: FitResult, pseudo: FitResult, n: int) -> np.ndarray:
    """
    √n(θ̂ − θ̂*) の成分ごとの値

    Raises:
        FlaggedFitError: どちらかの推定結果にフラグがある場合
    """
    if full.is_flagged or pseudo.is_flagged:
        raise FlaggedFitError(
            f"フラグ付きの推定結果は比較できません: full={sorted(full.flags)}, pseudo={sorted(pseudo.flags)}"
        )
    return math.sqrt(n) * (full.theta_hat.as_array() - pseudo.theta_hat.as_array())
