"""
漸近・経験フィッシャー情報行列

パラメータ順は (γ, u, σ²)。σ² のブロックは (γ, u) から分離している。
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from errors import PreconditionError, SingularInformationError
from model.quadrature import design_integral
from model.types import Dataset, LimitDesign, Theta

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class InfoMatrix:
    """3×3 対称情報行列"""
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise PreconditionError(f"情報行列は 3×3 である必要があります: {m.shape}")
        if not np.allclose(m, m.T, rtol=0.0, atol=SYMMETRY_TOLERANCE * max(1.0, np.abs(m).max())):
            raise PreconditionError("情報行列が対称ではありません")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def leading_minors(self) -> np.ndarray:
        return np.array([np.linalg.det(self.m[:k, :k]) for k in (1, 2, 3)])

    def is_positive_definite(self) -> bool:
        try:
            cho_factor(self.m)
            return True
        except LinAlgError:
            return False

    def inverse(self) -> np.ndarray:
        """
        コレスキー分解による逆行列

        Raises:
            SingularInformationError: 正定値でない場合
        """
        try:
            factor = cho_factor(self.m)
        except LinAlgError as e:
            raise SingularInformationError(f"情報行列のコレスキー分解に失敗しました: {e}")
        inv = cho_solve(factor, np.eye(3))
        return 0.5 * (inv + inv.T)


def _assemble(theta: Theta, k0: float, k1: float, k2: float) -> InfoMatrix:
    """∫(t−u)^k dF（または経験平均）k=0,1,2 から情報行列を組み立てる"""
    s = theta.sigma2
    g = theta.gamma
    m = np.zeros((3, 3))
    m[0, 0] = k2 / s
    m[0, 1] = m[1, 0] = -g * k1 / s
    m[1, 1] = g * g * k0 / s
    m[2, 2] = 0.5 / (s * s)
    return InfoMatrix(m)


def asymptotic_information(theta: Theta, design: LimitDesign) -> InfoMatrix:
    """
    漸近フィッシャー情報行列 I(θ)

    Args:
        theta: 識別可能なパラメータ（γ≠0, σ²>0, u は定義域内部）
        design: 極限デザイン

    Raises:
        PreconditionError: θ が識別可能でない場合
        QuadratureError: 求積が収束しない場合
    """
    theta.require_identifiable(design.domain)
    u = theta.u
    moments = [
        design_integral(lambda s, k=k: (s - u) ** k, design, upper=u, breakpoints=(u,))
        for k in (0, 1, 2)
    ]
    return _assemble(theta, *moments)


def empirical_information(theta: Theta, data: Dataset) -> InfoMatrix:
    """
    経験情報行列 I*_{1:n}(θ)（積分を (1/n)Σ 1{t_i ≤ u}(t_i−u)^k に置換）

    Raises:
        PreconditionError: γ = 0 または σ² ≤ 0 の場合
        SingularInformationError: 有効集合が空の場合
    """
    if theta.gamma == 0 or theta.sigma2 <= 0:
        raise PreconditionError(f"識別可能な θ が必要です (γ≠0, σ²>0): {theta}")
    active = data.t <= theta.u
    if not active.any():
        raise SingularInformationError(f"有効集合が空です (u={theta.u} < min t={data.t[0]})")
    z = data.t[active] - theta.u
    n = data.n
    return _assemble(theta, active.sum() / n, z.sum() / n, np.dot(z, z) / n)
