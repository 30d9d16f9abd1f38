"""
条件付き共役性による厳密な事後分布

u を固定するとモデルは回帰変数 (t_i − u)·1{t_i ≤ u} の γ についての線形モデルになり、
正規逆ガンマ事前分布の下で周辺尤度が閉形式で得られる。u の周辺事後はグリッド上で
台形則により正規化する。
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import gammaln

from config.settings import settings
from errors import PreconditionError
from estimate.profile import ActiveSetStats, FitResult
from model.types import Dataset, Domain, Theta

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Prior:
    """
    事前分布 π(u) × NIG(m0, k0, a0, b0)

    γ | σ² ~ N(m0, σ²/k0)、σ² ~ InvGamma(a0, b0)、u は定義域上の一様または切断正規。
    """
    domain: Domain
    m0: float = 0.0
    k0: float = 0.01
    a0: float = 2.1
    b0: float = 0.1
    u_kind: str = "uniform"
    u_loc: Optional[float] = None
    u_scale: float = 1.0

    def __post_init__(self):
        if not (self.k0 > 0 and self.a0 > 0 and self.b0 > 0):
            raise PreconditionError(f"NIG のハイパーパラメータは k0, a0, b0 > 0 が必要です: {self}")
        if not math.isfinite(self.m0):
            raise PreconditionError(f"m0 が有限ではありません: {self.m0}")
        if self.u_kind not in ("uniform", "truncnorm"):
            raise PreconditionError(f"未対応の u 事前分布です: {self.u_kind}")
        if self.u_kind == "truncnorm" and not self.u_scale > 0:
            raise PreconditionError(f"u_scale は正である必要があります: {self.u_scale}")

    @property
    def moment_order(self) -> int:
        """∫‖θ‖^k π(θ)dθ < ∞ が保証される最大の整数 k（σ² の逆ガンマは a0 未満の次数のみ有限）"""
        return int(math.ceil(self.a0)) - 1

    def _u_distribution(self):
        lower, upper = self.domain.u_lower, self.domain.u_upper
        if self.u_kind == "uniform":
            return stats.uniform(loc=lower, scale=upper - lower)
        loc = self.domain.midpoint if self.u_loc is None else self.u_loc
        return stats.truncnorm((lower - loc) / self.u_scale, (upper - loc) / self.u_scale,
                               loc=loc, scale=self.u_scale)

    def log_u_prior(self, u):
        return self._u_distribution().logpdf(u)

    def log_density(self, theta: Theta) -> float:
        """同時事前密度 log π(γ, u, σ²)"""
        if theta.sigma2 <= 0:
            return -math.inf
        log_u = float(self.log_u_prior(theta.u))
        log_sigma2 = float(stats.invgamma.logpdf(theta.sigma2, self.a0, scale=self.b0))
        log_gamma = float(stats.norm.logpdf(theta.gamma, self.m0, math.sqrt(theta.sigma2 / self.k0)))
        return log_u + log_sigma2 + log_gamma


@dataclass(frozen=True)
class ConjugateUpdate:
    """各 u における (γ, σ²) の条件付き事後パラメータ"""
    gamma_mean: np.ndarray
    precision: np.ndarray
    shape: float
    rate: np.ndarray
    log_marginal: np.ndarray


def conjugate_update(data: Dataset, prior: Prior, u) -> ConjugateUpdate:
    """
    固定 u ごとの正規逆ガンマ事後パラメータと周辺尤度 log m(u)

    kn = k0 + Σz²、mn = (k0·m0 + Σzx)/kn、an = a0 + n/2、bn = b0 + (Σx² + k0·m0² − kn·mn²)/2
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    active_stats = ActiveSetStats(data)
    count = np.searchsorted(active_stats.t, u, side="right")
    a, b, c, d, m = active_stats.moments(count)
    szx = a - u * b
    szz = np.maximum(c - 2.0 * u * d + u * u * m, 0.0)

    kn = prior.k0 + szz
    mn = (prior.k0 * prior.m0 + szx) / kn
    an = prior.a0 + 0.5 * data.n
    bn = prior.b0 + 0.5 * (active_stats.sum_xx + prior.k0 * prior.m0 ** 2 - kn * mn ** 2)
    bn = np.maximum(bn, prior.b0)

    log_marginal = (
        -0.5 * data.n * math.log(2 * math.pi)
        + 0.5 * np.log(prior.k0 / kn)
        + prior.a0 * math.log(prior.b0)
        - an * np.log(bn)
        + gammaln(an)
        - gammaln(prior.a0)
    )
    return ConjugateUpdate(gamma_mean=mn, precision=kn, shape=an, rate=bn, log_marginal=log_marginal)


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """台形則の求積重み（1点のみのときは点質量として 1）"""
    if nodes.size == 1:
        return np.ones(1)
    h = np.diff(nodes)
    w = np.zeros(nodes.size)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


@dataclass(frozen=True)
class UPosteriorGrid:
    """u の周辺事後分布のグリッド表現"""
    u_nodes: np.ndarray
    log_weights: np.ndarray
    normalized: np.ndarray

    @property
    def quadrature(self) -> np.ndarray:
        return trapezoid_weights(self.u_nodes)

    def expectation(self, values: np.ndarray) -> float:
        return float(np.dot(self.quadrature * self.normalized, values))

    def _segment_masses(self) -> np.ndarray:
        h = np.diff(self.u_nodes)
        return 0.5 * h * (self.normalized[:-1] + self.normalized[1:])

    def cdf(self, u) -> np.ndarray:
        """区分線形密度の厳密な累積分布関数"""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        nodes, p = self.u_nodes, self.normalized
        if nodes.size == 1:
            return (u >= nodes[0]).astype(float)
        cum = np.concatenate([[0.0], np.cumsum(self._segment_masses())])
        k = np.clip(np.searchsorted(nodes, u, side="right") - 1, 0, nodes.size - 2)
        h = nodes[k + 1] - nodes[k]
        s = np.clip(u - nodes[k], 0.0, h)
        slope = (p[k + 1] - p[k]) / h
        value = cum[k] + p[k] * s + 0.5 * slope * s * s
        value = np.where(u < nodes[0], 0.0, np.where(u >= nodes[-1], cum[-1], value))
        return np.clip(value / cum[-1], 0.0, 1.0)

    def ppf(self, q) -> np.ndarray:
        """区分線形密度の逆累積分布関数"""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        nodes, p = self.u_nodes, self.normalized
        if nodes.size == 1:
            return np.full(q.shape, nodes[0])
        masses = self._segment_masses()
        cum = np.concatenate([[0.0], np.cumsum(masses)])
        target = q * cum[-1]
        k = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, nodes.size - 2)
        r = target - cum[k]
        h = nodes[k + 1] - nodes[k]
        slope = (p[k + 1] - p[k]) / h
        # p_k·s + slope·s²/2 = r の数値的に安定な解
        disc = np.sqrt(np.maximum(p[k] ** 2 + 2.0 * slope * r, 0.0))
        denom = p[k] + disc
        s = np.where(denom > 0, 2.0 * r / np.where(denom > 0, denom, 1.0), 0.0)
        return nodes[k] + np.clip(s, 0.0, h)


@dataclass(frozen=True)
class PosteriorSummary:
    """事後平均（ベイズ推定量）と付随する診断"""
    theta_bayes: Theta
    sd: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    bvm_l1_u: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "gamma": self.theta_bayes.gamma,
            "u": self.theta_bayes.u,
            "sigma2": self.theta_bayes.sigma2,
            "sd": None if self.sd is None else self.sd.tolist(),
            "bvm_l1_u": self.bvm_l1_u,
            "n_draws": 0 if self.samples is None else int(self.samples.shape[0]),
        }


def u_marginal_log_posterior(data: Dataset, prior: Prior, u_nodes) -> UPosteriorGrid:
    """
    u の周辺事後 log π(u) + log m(u) をグリッドで評価し台形則で正規化する

    Raises:
        PreconditionError: ノードが狭義単調増加でない、または定義域外の場合
    """
    nodes = np.asarray(u_nodes, dtype=float).ravel()
    if nodes.size == 0:
        raise PreconditionError("u ノードが空です")
    if nodes.size > 1 and not np.all(np.diff(nodes) > 0):
        raise PreconditionError("u ノードは狭義単調増加である必要があります")
    if nodes[0] < prior.domain.u_lower or nodes[-1] > prior.domain.u_upper:
        raise PreconditionError("u ノードが定義域の外にあります")

    update = conjugate_update(data, prior, nodes)
    log_w = prior.log_u_prior(nodes) + update.log_marginal
    if not np.any(np.isfinite(log_w)):
        raise PreconditionError("全ノードで事後密度が 0 です")

    # 最大値シフトでアンダーフローを防ぐ
    shifted = np.exp(log_w - np.max(log_w))
    weights = trapezoid_weights(nodes)
    normalized = shifted / np.dot(weights, shifted)

    total = float(np.dot(weights, normalized))
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise PreconditionError(f"事後密度の正規化に失敗しました: {total}")

    logger.debug(f"u 事後グリッド: {nodes.size}ノード [{nodes[0]:.6g}, {nodes[-1]:.6g}]")
    return UPosteriorGrid(u_nodes=nodes, log_weights=log_w, normalized=normalized)


def default_u_nodes(fit: FitResult, domain: Domain) -> np.ndarray:
    """
    既定の u グリッド

    û ± 10·sqrt([I⁻¹]_22/n) の細かいグリッド（定義域と交差）に、
    小標本の多峰性を捉える定義域全体の粗いグリッドを合わせる。
    """
    coarse = np.linspace(domain.u_lower, domain.u_upper, settings.grid_coarse_nodes)
    if fit.cov_hat is None or not fit.cov_hat[1, 1] > 0:
        fine = np.linspace(domain.u_lower, domain.u_upper, settings.grid_fine_nodes)
    else:
        half = settings.grid_half_width_sd * math.sqrt(fit.cov_hat[1, 1])
        lo = max(domain.u_lower, fit.theta_hat.u - half)
        hi = min(domain.u_upper, fit.theta_hat.u + half)
        fine = np.linspace(lo, hi, settings.grid_fine_nodes)
    return np.unique(np.concatenate([coarse, fine]))


def sample_posterior(grid: UPosteriorGrid, data: Dataset, prior: Prior, n_draws: int, seed: int) -> np.ndarray:
    """
    合成法による事後サンプリング

    u をグリッドの逆累積分布関数で、続いて σ² | u ~ InvGamma(an, bn)、
    γ | σ², u ~ N(mn, σ²/kn) を厳密に抽出する。

    Returns:
        np.ndarray: 列 (gamma, u, sigma2) の形状 (n_draws, 3)
    """
    if n_draws < 1:
        raise PreconditionError(f"n_draws は 1 以上が必要です: {n_draws}")
    rng = np.random.Generator(np.random.Philox(seed))
    u = grid.ppf(rng.random(n_draws))
    update = conjugate_update(data, prior, u)
    sigma2 = update.rate / rng.standard_gamma(update.shape, size=n_draws)
    gamma = update.gamma_mean + np.sqrt(sigma2 / update.precision) * rng.standard_normal(n_draws)
    return np.column_stack([gamma, u, sigma2])


def bayes_estimator(grid: UPosteriorGrid, data: Dataset, prior: Prior) -> PosteriorSummary:
    """
    事後平均 θ̃ = ∫θ π(θ|X) dθ をグリッド求積と閉形式の条件付き平均で計算する

    Raises:
        PreconditionError: a0 ≤ 1（σ² の事後平均の存在が保証されない）場合
    """
    if prior.moment_order < 1:
        raise PreconditionError(f"a0 ≤ 1 では σ² の平均が無限になりえます (a0={prior.a0})")

    update = conjugate_update(data, prior, grid.u_nodes)
    an = update.shape
    mean_sigma2_u = update.rate / (an - 1.0)

    e_gamma = grid.expectation(update.gamma_mean)
    e_u = grid.expectation(grid.u_nodes)
    e_sigma2 = grid.expectation(mean_sigma2_u)

    # 全分散の公式 Var = E[Var|u] + Var(E|u)
    var_gamma_u = mean_sigma2_u / update.precision
    var_gamma = grid.expectation(var_gamma_u + update.gamma_mean ** 2) - e_gamma ** 2
    var_u = grid.expectation(grid.u_nodes ** 2) - e_u ** 2
    if an > 2:
        var_sigma2_u = mean_sigma2_u ** 2 / (an - 2.0)
        var_sigma2 = grid.expectation(var_sigma2_u + mean_sigma2_u ** 2) - e_sigma2 ** 2
    else:
        var_sigma2 = math.inf
    sd = np.sqrt(np.maximum([var_gamma, var_u, var_sigma2], 0.0))

    theta_bayes = Theta(gamma=e_gamma, u=e_u, sigma2=e_sigma2)
    logger.debug(f"ベイズ推定量: {theta_bayes}")
    return PosteriorSummary(theta_bayes=theta_bayes, sd=sd)
