"""
スコアベクトルと観測情報行列

尤度は各観測温度 t_i で u について連続微分可能ではないため、
u ∈ {t_i} では評価を拒否する。
"""

import numpy as np

from errors import NonDifferentiablePointError
from model.likelihood import residuals
from model.types import Dataset, Theta


def _require_off_knots(theta: Theta, data: Dataset) -> None:
    theta.require_positive_variance()
    idx = np.searchsorted(data.t, theta.u)
    if idx < data.n and data.t[idx] == theta.u:
        raise NonDifferentiablePointError(f"u={theta.u} が観測温度と一致するため微分できません")


def score(theta: Theta, data: Dataset) -> np.ndarray:
    """
    対数尤度の勾配 (∂l/∂γ, ∂l/∂u, ∂l/∂σ²)

    Raises:
        NonDifferentiablePointError: u が観測温度と一致する場合
    """
    _require_off_knots(theta, data)
    s = theta.sigma2
    r = residuals(theta, data)
    active = data.t < theta.u
    z = data.t[active] - theta.u
    r_active = r[active]
    return np.array([
        np.dot(z, r_active) / s,
        -theta.gamma * r_active.sum() / s,
        -0.5 * data.n / s + 0.5 * np.dot(r, r) / (s * s),
    ])


def observed_information(theta: Theta, data: Dataset) -> np.ndarray:
    """
    (1/n)·B_{1:n}(θ)：平均対数尤度のヘッセ行列の符号反転

    Raises:
        NonDifferentiablePointError: u が観測温度と一致する場合
    """
    _require_off_knots(theta, data)
    s = theta.sigma2
    g = theta.gamma
    n = data.n
    r = residuals(theta, data)
    active = data.t < theta.u
    z = data.t[active] - theta.u
    r_active = r[active]

    b = np.zeros((3, 3))
    b[0, 0] = np.dot(z, z) / s
    b[0, 1] = (r_active - g * z).sum() / s
    b[0, 2] = np.dot(r_active, z) / (s * s)
    b[1, 1] = g * g * active.sum() / s
    b[1, 2] = -g * r_active.sum() / (s * s)
    b[2, 2] = -0.5 * n / (s * s) + np.dot(r, r) / (s ** 3)
    b[1, 0], b[2, 0], b[2, 1] = b[0, 1], b[0, 2], b[1, 2]
    return b / n
