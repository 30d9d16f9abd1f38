"""
回帰関数・対数尤度・経験分布関数・乖離関数

平均関数 μ(η, t) = γ(t − u)·1{t ≤ u} とガウス雑音の対数尤度を扱う。
"""

import math
from typing import Callable, Dict, Tuple, Union

import numpy as np

from errors import PreconditionError
from model.quadrature import design_integral
from model.types import Dataset, LimitDesign, Theta

ArrayLike = Union[float, np.ndarray]


def mu(eta: Tuple[float, float], t: ArrayLike) -> ArrayLike:
    """
    回帰関数 μ(η, t)

    t ≤ u で γ(t − u)、t > u で 0（指示関数 1_{[t,+∞)}(u) を t ≤ u として実装）。

    Args:
        eta: (γ, u)
        t: 温度（スカラーまたは配列）

    Returns:
        t と同じ形の平均値
    """
    gamma, u = eta
    t_arr = np.asarray(t, dtype=float)
    value = np.where(t_arr <= u, gamma * (t_arr - u), 0.0)
    if np.ndim(t) == 0:
        return float(value)
    return value


def residuals(theta: Theta, data: Dataset) -> np.ndarray:
    return data.x - mu(theta.eta, data.t)


def log_likelihood_terms(theta: Theta, data: Dataset) -> np.ndarray:
    """
    観測ごとの対数尤度 l_i

    Raises:
        PreconditionError: σ² ≤ 0 の場合
    """
    theta.require_positive_variance()
    r = residuals(theta, data)
    return -0.5 * math.log(2 * math.pi * theta.sigma2) - r ** 2 / (2 * theta.sigma2)


def log_likelihood(theta: Theta, data: Dataset) -> float:
    """
    対数尤度 −(n/2)log(2πσ²) − (1/2σ²)Σ(x_i − μ(η, t_i))²

    Raises:
        PreconditionError: σ² ≤ 0 の場合
    """
    theta.require_positive_variance()
    r = residuals(theta, data)
    return float(-0.5 * data.n * math.log(2 * math.pi * theta.sigma2) - np.dot(r, r) / (2 * theta.sigma2))


def ecdf(data: Dataset) -> Callable[[ArrayLike], ArrayLike]:
    """経験分布関数 F_n(u) = #{i: t_i ≤ u}/n（右連続）"""
    t = data.t
    n = data.n

    def _fn(u: ArrayLike) -> ArrayLike:
        counts = np.searchsorted(t, u, side="right")
        if np.ndim(u) == 0:
            return float(counts) / n
        return counts / n

    return _fn


def sup_cdf_deviation(data: Dataset, design: LimitDesign, grid_size: int = 2001) -> float:
    """
    一様グリッド上の sup |F_n(u) − F(u)|（仮定 (A1) の診断）

    Args:
        data: 観測データ
        design: 極限デザイン
        grid_size: グリッド点数（2以上）
    """
    if grid_size < 2:
        raise PreconditionError(f"grid_size は 2 以上が必要です: {grid_size}")
    grid = np.linspace(design.domain.u_lower, design.domain.u_upper, grid_size)
    return float(np.max(np.abs(ecdf(data)(grid) - design.cdf(grid))))


def _variance_term(sigma2: float, sigma2_0: float) -> float:
    if sigma2 <= 0 or sigma2_0 <= 0:
        raise PreconditionError(f"分散は正である必要があります: σ²={sigma2}, σ0²={sigma2_0}")
    ratio = sigma2_0 / sigma2
    return ratio - 1.0 - math.log(ratio)


def discrepancy_b_n(theta: Theta, theta0: Theta, data: Dataset) -> float:
    """
    経験乖離関数 b_n(θ)

    (σ0²/σ² − 1 − log σ0²/σ²) + (1/σ²)(1/n)Σ[μ(η0,t_i) − μ(η,t_i)]²。常に非負。
    """
    var_term = _variance_term(theta.sigma2, theta0.sigma2)
    diff = mu(theta0.eta, data.t) - mu(theta.eta, data.t)
    return float(var_term + np.mean(diff ** 2) / theta.sigma2)


def discrepancy_b(theta: Theta, theta0: Theta, design: LimitDesign) -> float:
    """
    母集団乖離関数 b(θ)

    b_n の和を ∫[μ(η0,t) − μ(η,t)]² f(t) dt に置き換えたもの。θ = θ0 のときに限り 0。

    Raises:
        QuadratureError: 求積が収束しない場合
    """
    var_term = _variance_term(theta.sigma2, theta0.sigma2)
    # max(u, u0) より右では両平均とも 0
    upper = max(theta.u, theta0.u)
    integral = design_integral(
        lambda s: (mu(theta0.eta, s) - mu(theta.eta, s)) ** 2,
        design,
        upper=upper,
        breakpoints=(theta.u, theta0.u),
    )
    return float(var_term + integral / theta.sigma2)


def nu(eta_hat: Tuple[float, float], theta0: Theta, data: Dataset) -> np.ndarray:
    """ν_i(η̂) = μ(η0, t_i) − μ(η̂, t_i)"""
    return mu(theta0.eta, data.t) - mu(eta_hat, data.t)


def sigma2_decomposition(eta_hat: Tuple[float, float], theta0: Theta, data: Dataset) -> Dict[str, float]:
    """
    σ̂² = (1/n)Σν_i² + (2/n)Σν_iξ_i + (1/n)Σξ_i² の3項分解（真値が既知のシミュレーション専用）

    Returns:
        Dict: "bias"（ν²項）、"cross"（交差項）、"noise"（ξ²項）、"total"（和）
    """
    v = nu(eta_hat, theta0, data)
    xi = data.x - mu(theta0.eta, data.t)
    n = data.n
    parts = {
        "bias": float(np.dot(v, v) / n),
        "cross": float(2.0 * np.dot(v, xi) / n),
        "noise": float(np.dot(xi, xi) / n),
    }
    parts["total"] = parts["bias"] + parts["cross"] + parts["noise"]
    return parts


def sup_nu(eta_hat: Tuple[float, float], theta0: Theta, data: Dataset) -> float:
    """max_i |ν_i(η̂)|"""
    return float(np.max(np.abs(nu(eta_hat, theta0, data))))
