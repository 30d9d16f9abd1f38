"""
二相連続折れ線回帰モデルの基本データ型

パラメータ θ = (γ, u, σ²)、温度の定義域、観測データ、極限デザイン (F, f)
"""

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import stats

from errors import PreconditionError


@dataclass(frozen=True)
class Domain:
    """温度のコンパクトな台 [u_lower, u_upper]"""
    u_lower: float
    u_upper: float

    def __post_init__(self):
        if not (math.isfinite(self.u_lower) and math.isfinite(self.u_upper)):
            raise PreconditionError(f"定義域の端点が有限ではありません: [{self.u_lower}, {self.u_upper}]")
        if not self.u_lower < self.u_upper:
            raise PreconditionError(f"定義域は u_lower < u_upper が必要です: [{self.u_lower}, {self.u_upper}]")

    @property
    def width(self) -> float:
        return self.u_upper - self.u_lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.u_lower + self.u_upper)

    def contains(self, u: float) -> bool:
        """閉区間 [u_lower, u_upper] に含まれるか"""
        return self.u_lower <= u <= self.u_upper

    def is_interior(self, u: float) -> bool:
        """開区間 (u_lower, u_upper) に含まれるか"""
        return self.u_lower < u < self.u_upper


@dataclass(frozen=True)
class Theta:
    """
    モデルパラメータ θ = (γ, u, σ²)

    γ: 加熱勾配、u: 屈折点（温度単位）、σ²: ノイズ分散。
    推定結果として σ² = 0 や γ = 0 が現れうるため、型としては σ² ≥ 0 を許容し、
    σ² > 0 を要求する操作側で検査する。
    """
    gamma: float
    u: float
    sigma2: float
    degenerate: bool = False

    def __post_init__(self):
        for name in ("gamma", "u", "sigma2"):
            if not math.isfinite(getattr(self, name)):
                raise PreconditionError(f"θ の {name} が有限ではありません: {getattr(self, name)}")
        if self.sigma2 < 0:
            raise PreconditionError(f"σ² は非負である必要があります: {self.sigma2}")

    @property
    def eta(self) -> Tuple[float, float]:
        """回帰パラメータ η = (γ, u)"""
        return (self.gamma, self.u)

    @property
    def beta(self) -> float:
        """切片 β = −γu"""
        return -self.gamma * self.u

    @property
    def tau(self) -> Tuple[float, float]:
        """傾き・切片による再パラメータ化 τ = (β, γ)"""
        return (self.beta, self.gamma)

    @classmethod
    def from_tau(cls, beta: float, gamma: float, sigma2: float) -> "Theta":
        """(β, γ, σ²) から θ を復元（γ ≠ 0 が必要）"""
        if gamma == 0:
            raise PreconditionError("γ = 0 では切片から屈折点を復元できません")
        return cls(gamma=gamma, u=-beta / gamma, sigma2=sigma2)

    def as_array(self) -> np.ndarray:
        return np.array([self.gamma, self.u, self.sigma2], dtype=float)

    def require_positive_variance(self) -> None:
        if self.sigma2 <= 0:
            raise PreconditionError(f"σ² > 0 が必要です: {self.sigma2}")

    def is_identifiable(self, domain: Domain) -> bool:
        """仮定 (A2) のパラメータ空間に属するか"""
        return self.gamma != 0 and self.sigma2 > 0 and domain.is_interior(self.u) and not self.degenerate

    def require_identifiable(self, domain: Domain) -> None:
        if not self.is_identifiable(domain):
            raise PreconditionError(
                f"識別可能な θ が必要です (γ≠0, σ²>0, u は定義域内部): {self}"
            )


@dataclass(frozen=True)
class Dataset:
    """
    温度 t と応答 x の組

    生成時に温度の昇順へ安定ソートする（尤度は置換不変な和のみで構成されるため）。
    """
    t: np.ndarray
    x: np.ndarray
    domain: Domain
    n: int = field(init=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float).ravel()
        if t.shape != x.shape:
            raise PreconditionError(f"t と x の長さが一致しません: {t.size} != {x.size}")
        if t.size < 1:
            raise PreconditionError("観測数は 1 以上が必要です")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise PreconditionError("t, x に有限でない値が含まれています")
        if t.min() < self.domain.u_lower or t.max() > self.domain.u_upper:
            raise PreconditionError(
                f"温度が定義域 [{self.domain.u_lower}, {self.domain.u_upper}] の外にあります: "
                f"[{t.min()}, {t.max()}]"
            )

        order = np.argsort(t, kind="stable")
        t = t[order]
        x = x[order]
        t.setflags(write=False)
        x.setflags(write=False)

        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "n", int(t.size))

    def subset(self, mask: np.ndarray) -> "Dataset":
        """真偽マスクで観測を抽出した新しいデータセット"""
        return Dataset(t=self.t[mask], x=self.x[mask], domain=self.domain)


@dataclass(frozen=True)
class LimitDesign:
    """
    温度の極限分布 (F, f)（仮定 (A1)）

    組み込み:
        kind="uniform"   定義域上の一様分布
        kind="truncnorm" 定義域で切断した正規分布 (loc, scale)
        kind="periodic"  周期パターン各点に定義域で切断した正規ジッター (scale) を加えた混合分布
    """
    domain: Domain
    kind: str = "uniform"
    loc: float = 0.0
    scale: float = 1.0
    pattern: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("uniform", "truncnorm", "periodic"):
            raise PreconditionError(f"未対応のデザイン種別です: {self.kind}")
        if self.kind in ("truncnorm", "periodic") and not self.scale > 0:
            raise PreconditionError(f"{self.kind} デザインの scale は正である必要があります: {self.scale}")
        if self.kind == "periodic":
            if not self.pattern:
                raise PreconditionError("periodic デザインには温度パターンが必要です")
            if any(not self.domain.contains(p) for p in self.pattern):
                raise PreconditionError(f"パターンが定義域の外にあります: {self.pattern}")
            object.__setattr__(self, "pattern", tuple(float(p) for p in self.pattern))

        object.__setattr__(self, "_components", self._build_components())

    def _build_components(self) -> List:
        lower, upper = self.domain.u_lower, self.domain.u_upper
        if self.kind == "uniform":
            return [stats.uniform(loc=lower, scale=upper - lower)]
        centers = [self.loc] if self.kind == "truncnorm" else list(self.pattern)
        return [
            stats.truncnorm((lower - c) / self.scale, (upper - c) / self.scale, loc=c, scale=self.scale)
            for c in centers
        ]

    def cdf(self, u):
        return sum(comp.cdf(u) for comp in self._components) / len(self._components)

    def pdf(self, u):
        return sum(comp.pdf(u) for comp in self._components) / len(self._components)

    def ppf(self, q):
        """逆分布関数。混合分布は細かいグリッド上の cdf の線形補間で反転する"""
        if len(self._components) == 1:
            return self._components[0].ppf(q)
        grid = np.linspace(self.domain.u_lower, self.domain.u_upper, 8193)
        return np.interp(q, self.cdf(grid), grid)
