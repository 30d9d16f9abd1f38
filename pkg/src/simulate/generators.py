"""
シミュレーションデータの生成

温度は i.i.d.（極限デザインの逆分布関数）または周期パターン＋ジッターで生成し、
応答は真の θ0 のもとでガウス雑音を加えて生成する。
乱数はすべてカウンタベースの Philox ストリームで、(seed, n, r, stream) から一意に決まる。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import stats

from errors import PreconditionError
from model.likelihood import mu
from model.types import Dataset, Domain, LimitDesign, Theta

logger = logging.getLogger(__name__)

# 反復内の乱数ストリーム番号
STREAM_TEMPERATURE = 0
STREAM_NOISE = 1

SeedLike = Union[int, np.random.SeedSequence]


@dataclass(frozen=True)
class PeriodicDesign:
    """
    周期的（非ランダム）な温度パターンに切断正規ジッターを加えるデザイン

    ジッターは各パターン点を中心に定義域で切断した正規分布から引く。
    jitter_sd = 0 ならパターンをそのまま繰り返す。
    """
    domain: Domain
    pattern: Tuple[float, ...]
    jitter_sd: float = 0.0

    def __post_init__(self):
        if len(self.pattern) < 1:
            raise PreconditionError("周期パターンが空です")
        if any(not self.domain.contains(p) for p in self.pattern):
            raise PreconditionError(f"パターンが定義域の外にあります: {self.pattern}")
        if not self.jitter_sd >= 0:
            raise PreconditionError(f"jitter_sd は非負である必要があります: {self.jitter_sd}")
        object.__setattr__(self, "pattern", tuple(float(p) for p in self.pattern))

    @property
    def period(self) -> int:
        return len(self.pattern)

    @classmethod
    def equispaced(cls, domain: Domain, period: int, jitter_sd: float = 0.0) -> "PeriodicDesign":
        """定義域を period 等分した各小区間の中点をパターンとする"""
        if period < 1:
            raise PreconditionError(f"period は 1 以上が必要です: {period}")
        edges = np.linspace(domain.u_lower, domain.u_upper, period + 1)
        return cls(domain=domain, pattern=tuple(0.5 * (edges[:-1] + edges[1:])), jitter_sd=jitter_sd)

    def limit_design(self) -> Optional[LimitDesign]:
        """経験分布の極限（パターン点ごとの切断正規の混合）。ジッターが無ければ連続な極限はない"""
        if self.jitter_sd == 0:
            return None
        return LimitDesign(domain=self.domain, kind="periodic", scale=self.jitter_sd, pattern=self.pattern)


Design = Union[LimitDesign, PeriodicDesign]


def replicate_seed(seed: int, n: int, rep_id: int, stream: int) -> np.random.SeedSequence:
    """(seed, n, r, stream) から独立なシード系列を作る"""
    return np.random.SeedSequence([int(seed), int(n), int(rep_id), int(stream)])


def make_rng(seed: SeedLike) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def limit_of(design: Design) -> Optional[LimitDesign]:
    """デザインの極限分布（存在しなければ None）"""
    if isinstance(design, LimitDesign):
        return design
    return design.limit_design()


def gen_temperatures(design: Design, n: int, seed: SeedLike) -> np.ndarray:
    """
    温度系列を生成する

    Args:
        design: LimitDesign（i.i.d. 逆分布関数法）または PeriodicDesign（パターンの繰り返し＋ジッター）
        n: 観測数
        seed: 整数または SeedSequence

    Returns:
        np.ndarray: 生成順の温度（定義域内にクランプ済み）

    Raises:
        PreconditionError: n < 1 の場合
    """
    if n < 1:
        raise PreconditionError(f"n は 1 以上が必要です: {n}")
    rng = make_rng(seed)
    domain = design.domain

    if isinstance(design, LimitDesign):
        temps = np.asarray(design.ppf(rng.random(n)), dtype=float)
    else:
        centers = np.resize(np.asarray(design.pattern), n)
        if design.jitter_sd > 0:
            sd = design.jitter_sd
            a = (domain.u_lower - centers) / sd
            b = (domain.u_upper - centers) / sd
            temps = stats.truncnorm.ppf(rng.random(n), a, b, loc=centers, scale=sd)
        else:
            temps = centers.astype(float)

    return np.clip(temps, domain.u_lower, domain.u_upper)


def gen_observations(theta0: Theta, temps: np.ndarray, seed: SeedLike,
                     domain: Optional[Domain] = None) -> Dataset:
    """
    x_i = μ(η0, t_i) + σ0·z_i を生成する（σ0² = 0 なら雑音なし）

    Args:
        theta0: 真のパラメータ
        temps: 温度
        seed: 整数または SeedSequence
        domain: 定義域。省略時は温度の最小値・最大値

    Returns:
        Dataset: 観測データ
    """
    temps = np.asarray(temps, dtype=float)
    if domain is None:
        domain = Domain(u_lower=float(temps.min()), u_upper=float(temps.max()))
    mean = mu(theta0.eta, temps)
    if theta0.sigma2 == 0:
        x = np.array(mean, dtype=float)
    else:
        z = make_rng(seed).standard_normal(temps.size)
        x = mean + np.sqrt(theta0.sigma2) * z
    return Dataset(t=temps, x=x, domain=domain)


def simulate_replicate_data(theta0: Theta, design: Design, n: int, seed: int, rep_id: int) -> Dataset:
    """反復 (n, rep_id) のデータを再現可能に生成する"""
    temps = gen_temperatures(design, n, replicate_seed(seed, n, rep_id, STREAM_TEMPERATURE))
    return gen_observations(theta0, temps, replicate_seed(seed, n, rep_id, STREAM_NOISE), domain=design.domain)
