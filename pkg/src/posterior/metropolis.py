"""
ランダムウォーク・メトロポリス法

共役族に入らない事前分布のための汎用サンプラー。(γ, u, log σ²) 上のガウス提案を用いる。
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from errors import PreconditionError, StepSizeError
from estimate.profile import fit_mle
from model.likelihood import log_likelihood
from model.types import Dataset, Theta

logger = logging.getLogger(__name__)

TARGET_ACCEPTANCE = 0.3
ADAPT_BATCH = 50


@dataclass(frozen=True)
class RWMResult:
    """サンプラーの出力"""
    draws: np.ndarray
    acceptance_rate: float
    step: np.ndarray


def _log_target(phi: np.ndarray, data: Dataset, log_prior: Callable[[Theta], float]) -> float:
    gamma, u, log_sigma2 = phi
    if not data.domain.is_interior(u):
        return -math.inf
    theta = Theta(gamma=float(gamma), u=float(u), sigma2=math.exp(log_sigma2))
    lp = log_prior(theta)
    if not math.isfinite(lp):
        return -math.inf
    # σ² = exp(φ3) のヤコビアン
    return log_likelihood(theta, data) + lp + log_sigma2


def rwm_sampler(data: Dataset, log_prior: Callable[[Theta], float], n_draws: int, seed: int,
                step: Sequence[float], adapt_window: int = 1000,
                init: Optional[Theta] = None) -> RWMResult:
    """
    ランダムウォーク・メトロポリスによる事後サンプリング

    Args:
        data: 観測データ
        log_prior: 対数事前密度
        n_draws: 保存する抽出数（0 なら空の結果）
        seed: 乱数シード
        step: (γ, u, log σ²) 各座標の提案標準偏差の初期値
        adapt_window: 提案幅を調整するバーンイン反復数
        init: 初期値（省略時は最尤推定値）

    Returns:
        RWMResult: 列 (gamma, u, sigma2) の抽出と、保存期間の受理率

    Raises:
        PreconditionError: 初期値で対数事前密度が有限でない場合
        StepSizeError: 適応期間で一度も受理されなかった場合
    """
    step = np.asarray(step, dtype=float)
    if step.shape != (3,) or not np.all(step > 0):
        raise PreconditionError(f"step は正の3成分ベクトルが必要です: {step}")
    if n_draws <= 0:
        return RWMResult(draws=np.empty((0, 3)), acceptance_rate=0.0, step=step)

    if init is None:
        fit = fit_mle(data)
        sigma2 = fit.theta_hat.sigma2 if fit.theta_hat.sigma2 > 0 else float(np.var(data.x)) + 1e-12
        init = Theta(gamma=fit.theta_hat.gamma, u=fit.theta_hat.u, sigma2=sigma2)

    phi = np.array([init.gamma, init.u, math.log(init.sigma2)])
    current = _log_target(phi, data, log_prior)
    if not math.isfinite(current):
        raise PreconditionError(f"初期値で対数事後密度が有限ではありません: {init}")

    rng = np.random.Generator(np.random.Philox(seed))

    # 適応期間: バッチごとに受理率を目標へ寄せる
    accepted_window = 0
    accepted_batch = 0
    for it in range(1, adapt_window + 1):
        proposal = phi + step * rng.standard_normal(3)
        candidate = _log_target(proposal, data, log_prior)
        if math.log(1.0 - rng.random()) < candidate - current:
            phi, current = proposal, candidate
            accepted_window += 1
            accepted_batch += 1
        if it % ADAPT_BATCH == 0:
            rate = accepted_batch / ADAPT_BATCH
            step = step * math.exp(rate - TARGET_ACCEPTANCE)
            accepted_batch = 0

    if adapt_window > 0 and accepted_window == 0:
        raise StepSizeError(f"適応期間 {adapt_window} 反復で受理がありません。step を小さくしてください: {step}")

    draws = np.empty((n_draws, 3))
    accepted = 0
    for i in range(n_draws):
        proposal = phi + step * rng.standard_normal(3)
        candidate = _log_target(proposal, data, log_prior)
        if math.log(1.0 - rng.random()) < candidate - current:
            phi, current = proposal, candidate
            accepted += 1
        draws[i] = (phi[0], phi[1], math.exp(phi[2]))

    rate = accepted / n_draws
    logger.info(f"RWM 完了: {n_draws}抽出, 受理率 {rate:.3f}")
    return RWMResult(draws=draws, acceptance_rate=rate, step=step)
