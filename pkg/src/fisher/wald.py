"""
ワルド信頼区間

√n(θ̂ − θ0) → N(0, I(θ0)⁻¹) に基づく座標ごとの区間
"""

from typing import Optional, Union

import numpy as np
from scipy.stats import norm

from errors import FlaggedFitError, PreconditionError
from fisher.information import InfoMatrix, asymptotic_information, empirical_information
from model.types import Dataset, LimitDesign

PARAMETER_NAMES = ("gamma", "u", "sigma2")


def normal_intervals(center: np.ndarray, cov: np.ndarray, level: float) -> np.ndarray:
    """
    center ± z_{(1+level)/2}·sqrt(diag(cov))

    Returns:
        np.ndarray: 形状 (k, 2) の [下限, 上限]
    """
    if not 0 < level < 1:
        raise PreconditionError(f"信頼水準は (0, 1) の範囲が必要です: {level}")
    z = norm.ppf(0.5 * (1.0 + level))
    half = z * np.sqrt(np.diag(cov))
    center = np.asarray(center, dtype=float)
    return np.column_stack([center - half, center + half])


def wald_interval(fit, design_or_data: Optional[Union[LimitDesign, Dataset]] = None,
                  level: float = 0.95) -> np.ndarray:
    """
    θ̂ の各座標に対するワルド区間

    Args:
        fit: 退化フラグのない FitResult
        design_or_data: LimitDesign なら θ̂ での漸近情報、Dataset なら θ̂ での経験情報
                        （省略時は fit.cov_hat を用いる）
        level: 信頼水準

    Returns:
        np.ndarray: (γ, u, σ²) 順の形状 (3, 2) の区間

    Raises:
        FlaggedFitError: フラグ付きの推定結果
        SingularInformationError: 情報行列が特異な場合
    """
    if fit.is_flagged:
        raise FlaggedFitError(f"フラグ付きの推定結果にはワルド区間を構成できません: {sorted(fit.flags)}")

    if isinstance(design_or_data, LimitDesign):
        info: InfoMatrix = asymptotic_information(fit.theta_hat, design_or_data)
        cov = info.inverse() / fit.n
    elif isinstance(design_or_data, Dataset):
        cov = empirical_information(fit.theta_hat, design_or_data).inverse() / fit.n
    elif fit.cov_hat is not None:
        cov = fit.cov_hat
    else:
        raise PreconditionError("共分散推定がありません。データまたはデザインを指定してください")

    return normal_intervals(fit.theta_hat.as_array(), cov, level)
