"""
屈折点プロファイル尤度による厳密な最尤推定

u を固定すると (γ, σ²) は閉形式で最小化でき、残差平方和 rss(u) は
隣接する観測温度の間で有効集合 A(u) = {i: t_i ≤ u} が一定の有理関数になる。
各区間の臨界点と端点を列挙して大域最小を求める。
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import FrozenSet, Optional, Sequence

import numpy as np

from errors import PreconditionError, SingularInformationError
from fisher.information import empirical_information
from model.types import Dataset, Domain, Theta

logger = logging.getLogger(__name__)

# 推定結果のフラグ
DEGENERATE_GAMMA_ZERO = "degenerate_gamma_zero"
SIGMA2_ZERO = "sigma2_zero"
BREAKPOINT_AT_BOUNDARY = "breakpoint_at_boundary"
EMPTY_ACTIVE_SET = "empty_active_set"

MIN_OBSERVATIONS = 3
BOUNDARY_EPS_FACTOR = 1e-12
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ProfilePoint:
    """固定した u における (γ, σ²) のプロファイル最小化結果"""
    u: float
    gamma_hat: Optional[float]
    rss: float
    active_count: int


@dataclass(frozen=True)
class FitResult:
    """最尤推定の結果"""
    theta_hat: Theta
    rss: float
    loglik: float
    active_count: int
    n: int
    cov_hat: Optional[np.ndarray] = None
    flags: FrozenSet[str] = field(default_factory=frozenset)
    n_deleted: int = 0

    @property
    def is_flagged(self) -> bool:
        return bool(self.flags)

    def to_dict(self) -> dict:
        """JSON出力用の辞書"""
        return {
            "gamma": self.theta_hat.gamma,
            "u": self.theta_hat.u,
            "sigma2": self.theta_hat.sigma2,
            "beta": self.theta_hat.beta,
            "rss": self.rss,
            "loglik": self.loglik,
            "n": self.n,
            "n_deleted": self.n_deleted,
            "active_count": self.active_count,
            "cov_hat": None if self.cov_hat is None else self.cov_hat.tolist(),
            "flags": sorted(self.flags),
        }


class ActiveSetStats:
    """温度昇順データの累積和による有効集合統計量"""

    def __init__(self, data: Dataset):
        t, x = data.t, data.x
        zero = np.zeros(1)
        self.t = t
        self.sum_xx = float(np.dot(x, x))
        self.cs_tx = np.concatenate([zero, np.cumsum(t * x)])
        self.cs_x = np.concatenate([zero, np.cumsum(x)])
        self.cs_tt = np.concatenate([zero, np.cumsum(t * t)])
        self.cs_t = np.concatenate([zero, np.cumsum(t)])

    def moments(self, count: np.ndarray):
        """先頭 count 個の観測に対する (a, b, c, d, m)"""
        return self.cs_tx[count], self.cs_x[count], self.cs_tt[count], self.cs_t[count], count.astype(float)

    def profile(self, u: np.ndarray):
        """
        各 u における (有効数, S1, S2, rss)

        S2 が丸め誤差レベル以下なら分母ゼロ（γ̂ 未定義）として rss = Σx² を返す。
        """
        u = np.asarray(u, dtype=float)
        count = np.searchsorted(self.t, u, side="right")
        a, b, c, d, m = self.moments(count)
        s1 = a - u * b
        s2 = c - 2.0 * u * d + u * u * m
        scale = c + u * u * m
        defined = s2 > 1e-12 * np.maximum(scale, 1e-300)
        gain = np.where(defined, s1 * s1 / np.where(defined, s2, 1.0), 0.0)
        rss = np.maximum(self.sum_xx - gain, 0.0)
        return count, s1, s2, rss, defined


def _check_u(u: float, domain: Domain) -> None:
    if not domain.contains(u):
        raise PreconditionError(f"u が定義域 [{domain.u_lower}, {domain.u_upper}] の外にあります: {u}")


def profile_fit_at(u: float, data: Dataset) -> ProfilePoint:
    """
    固定した u での γ̂(u) と rss(u)

    Args:
        u: 屈折点（定義域内）
        data: 観測データ

    Returns:
        ProfilePoint: 有効集合が空または Σ_A(t_i−u)² = 0 のとき gamma_hat は None、rss = Σx²

    Raises:
        PreconditionError: u が定義域外の場合
    """
    _check_u(u, data.domain)
    active = data.t <= u
    z = data.t[active] - u
    x_active = data.x[active]
    sum_xx = float(np.dot(data.x, data.x))
    s2 = float(np.dot(z, z))

    if s2 <= 0.0:
        return ProfilePoint(u=float(u), gamma_hat=None, rss=sum_xx, active_count=int(active.sum()))

    s1 = float(np.dot(z, x_active))
    gamma_hat = s1 / s2
    r = data.x.copy()
    r[active] -= gamma_hat * z
    return ProfilePoint(u=float(u), gamma_hat=gamma_hat, rss=float(np.dot(r, r)), active_count=int(active.sum()))


def _segment_candidates(stats: ActiveSetStats, lo: float, hi: float) -> np.ndarray:
    """
    区間端点と各区間内部の臨界点を列挙する

    臨界点方程式 −b·S2(u) + S1(u)·(d − u·m) = 0 は u² の項が打ち消し合い、
    (ad − bc) + u(bd − am) = 0 の一次式になる。
    """
    knots = np.unique(stats.t)
    inner = knots[(knots > lo) & (knots < hi)]
    edges = np.concatenate([[lo], inner, [hi]])

    left, right = edges[:-1], edges[1:]
    mid = 0.5 * (left + right)
    count = np.searchsorted(stats.t, mid, side="right")
    a, b, c, d, m = stats.moments(count)

    coef0 = a * d - b * c
    coef1 = b * d - a * m
    solvable = np.abs(coef1) > 1e-14 * np.maximum(np.abs(b * d) + np.abs(a * m), 1e-300)
    root = np.where(solvable, -coef0 / np.where(solvable, coef1, 1.0), np.nan)
    inside = solvable & (root > left) & (root < right)

    return np.unique(np.concatenate([edges, root[inside]]))


def _loglik_from_rss(rss: float, n: int) -> float:
    if rss <= 0:
        return math.inf
    return -0.5 * n * math.log(2 * math.pi * rss / n) - 0.5 * n


def _finalize(data: Dataset, domain: Domain, u_best: float, at_boundary: bool) -> FitResult:
    """選ばれた u から θ̂・rss・フラグ・共分散推定を組み立てる"""
    point = profile_fit_at(u_best, data)
    n = data.n
    sum_xx = float(np.dot(data.x, data.x))
    flags = set()

    if point.gamma_hat is None or point.gamma_hat == 0.0:
        # γ̂ = 0 は u を識別しない。慣例として定義域中点を返す
        flags.add(DEGENERATE_GAMMA_ZERO)
        if point.active_count == 0:
            flags.add(EMPTY_ACTIVE_SET)
        rss = sum_xx
        theta_hat = Theta(gamma=0.0, u=domain.midpoint, sigma2=rss / n, degenerate=True)
        active_count = int(np.sum(data.t <= domain.midpoint))
    else:
        rss = point.rss
        theta_hat = Theta(gamma=point.gamma_hat, u=point.u, sigma2=rss / n)
        active_count = point.active_count
        if at_boundary:
            flags.add(BREAKPOINT_AT_BOUNDARY)

    if rss <= 1e-12 * max(1.0, sum_xx):
        flags.add(SIGMA2_ZERO)
        rss = 0.0
        theta_hat = replace(theta_hat, sigma2=0.0)

    cov_hat = None
    if not flags:
        try:
            cov_hat = empirical_information(theta_hat, data).inverse() / n
        except SingularInformationError as e:
            logger.warning(f"共分散推定を省略: {e}")

    for flag in sorted(flags):
        logger.warning(f"推定フラグ: {flag} (n={n}, û={theta_hat.u:.6g}, γ̂={theta_hat.gamma:.6g})")

    return FitResult(
        theta_hat=theta_hat,
        rss=rss,
        loglik=_loglik_from_rss(rss, n),
        active_count=active_count,
        n=n,
        cov_hat=cov_hat,
        flags=frozenset(flags),
    )


def _pick_smallest_u(u: np.ndarray, rss: np.ndarray, sum_xx: float) -> int:
    """rss 最小の候補のうち最小の u（許容差内の同点を含む）の添字"""
    best = float(np.min(rss))
    ties = np.flatnonzero(rss <= best + TIE_TOLERANCE * (1.0 + sum_xx))
    return int(ties[np.argmin(u[ties])])


def fit_mle(data: Dataset, domain: Optional[Domain] = None) -> FitResult:
    """
    区間ごとの閉形式探索による厳密な最尤推定

    Args:
        data: 観測データ（n ≥ 3）
        domain: 屈折点の探索範囲。省略時はデータの定義域

    Returns:
        FitResult: σ̂² = rss/n、同点は最小の u を採用

    Raises:
        PreconditionError: n < 3 または温度が定義域外の場合
    """
    if data.n < MIN_OBSERVATIONS:
        raise PreconditionError(f"最尤推定には {MIN_OBSERVATIONS} 観測以上が必要です: n={data.n}")
    if domain is None:
        domain = data.domain
    elif domain != data.domain:
        data = Dataset(t=data.t, x=data.x, domain=domain)

    stats = ActiveSetStats(data)
    eps = BOUNDARY_EPS_FACTOR * domain.width
    lo, hi = domain.u_lower + eps, domain.u_upper - eps

    candidates = _segment_candidates(stats, lo, hi)
    _, _, _, rss, _ = stats.profile(candidates)
    idx = _pick_smallest_u(candidates, rss, stats.sum_xx)
    u_best = float(candidates[idx])

    logger.debug(f"候補数 {candidates.size}, 最良 u={u_best:.12g}, rss={rss[idx]:.12g}")

    result = _finalize(data, domain, u_best, at_boundary=u_best in (lo, hi))
    logger.debug(f"最尤推定完了: n={data.n}, θ̂={result.theta_hat}")
    return result


def fit_mle_bruteforce(data: Dataset, u_grid: Sequence[float]) -> FitResult:
    """
    グリッド上の全点でプロファイルを評価し最良点を返す（テスト用オラクル）

    Raises:
        PreconditionError: グリッドが空、または定義域外の点を含む場合
    """
    grid = np.asarray(u_grid, dtype=float).ravel()
    if grid.size == 0:
        raise PreconditionError("u グリッドが空です")
    domain = data.domain
    if grid.min() < domain.u_lower or grid.max() > domain.u_upper:
        raise PreconditionError("u グリッドが定義域の外にはみ出しています")

    stats = ActiveSetStats(data)
    _, _, _, rss, _ = stats.profile(grid)
    idx = _pick_smallest_u(grid, rss, stats.sum_xx)
    u_best = float(grid[idx])

    eps = BOUNDARY_EPS_FACTOR * domain.width
    at_boundary = u_best <= domain.u_lower + eps or u_best >= domain.u_upper - eps
    return _finalize(data, domain, u_best, at_boundary=at_boundary)
