"""
ベルンシュタイン・フォン・ミーゼス距離と事後集中度

t_u = √n(u − û) の事後密度と N(0, [I⁻¹]_22) の L1 距離を u 周辺について計算する。
"""

import math
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from errors import FlaggedFitError, GridCoverageError
from fisher.information import InfoMatrix
from model.types import Domain
from posterior.conjugate import UPosteriorGrid

COVERAGE_SD = 6.0


def bvm_l1_u(grid: UPosteriorGrid, fit, info: InfoMatrix, n: int,
             domain: Optional[Domain] = None) -> float:
    """
    u 周辺事後と漸近正規分布の L1 距離（k = 0）

    Args:
        grid: u の事後グリッド
        fit: 中心 û を与える FitResult（擬似問題では θ̂*）
        info: 正定値の情報行列
        n: 標本サイズ
        domain: 与えられた場合、定義域端まで届いているグリッド側は被覆検査を免除する

    Returns:
        float: [0, 2] の距離

    Raises:
        FlaggedFitError: フラグ付きの推定結果
        GridCoverageError: グリッドが ±6 標準偏差を覆っていない場合
    """
    if fit.is_flagged:
        raise FlaggedFitError(f"フラグ付きの推定結果では BvM 距離を計算できません: {sorted(fit.flags)}")

    variance = info.inverse()[1, 1]
    sd_t = math.sqrt(variance)
    root_n = math.sqrt(n)
    center = fit.theta_hat.u

    t_nodes = root_n * (grid.u_nodes - center)
    density_t = grid.normalized / root_n

    reach = COVERAGE_SD * sd_t
    left_ok = t_nodes[0] <= -reach or (domain is not None and grid.u_nodes[0] <= domain.u_lower)
    right_ok = t_nodes[-1] >= reach or (domain is not None and grid.u_nodes[-1] >= domain.u_upper)
    if not (left_ok and right_ok):
        raise GridCoverageError(
            f"u グリッドが ±{COVERAGE_SD:.0f} 標準偏差を覆っていません "
            f"(t 範囲 [{t_nodes[0]:.3g}, {t_nodes[-1]:.3g}], 必要 ±{reach:.3g})。グリッドを広げてください"
        )

    target = norm.pdf(t_nodes, scale=sd_t)
    inside = float(trapezoid(np.abs(density_t - target), t_nodes))
    # グリッド外では事後密度 0、正規分布の裾の質量がそのまま距離に加わる
    outside = float(norm.cdf(t_nodes[0], scale=sd_t) + norm.sf(t_nodes[-1], scale=sd_t))
    return min(max(inside + outside, 0.0), 2.0)


def posterior_mass_near(grid: UPosteriorGrid, center: float, radius: float) -> float:
    """|u − center| < radius の事後確率"""
    lo, hi = grid.cdf([center - radius, center + radius])
    return float(hi - lo)
