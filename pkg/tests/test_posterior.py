"""
posterior パッケージ（共役事後・BvM 距離・ランダムウォーク・メトロポリス）の単体テスト
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

# srcディレクトリをパスに追加
project_root = Path(__file__).parent.parent
src_path = project_root / "src"
sys.path.insert(0, str(src_path))

from errors import FlaggedFitError, GridCoverageError, PreconditionError, StepSizeError
from estimate.profile import FitResult, fit_mle
from fisher.information import InfoMatrix
from model.likelihood import log_likelihood
from model.types import Dataset, Domain, LimitDesign, Theta
from posterior.bvm import bvm_l1_u, posterior_mass_near
from posterior.conjugate import (
    Prior, UPosteriorGrid, bayes_estimator, conjugate_update, default_u_nodes, sample_posterior,
    trapezoid_weights, u_marginal_log_posterior,
)
from posterior.metropolis import rwm_sampler
from simulate.generators import simulate_replicate_data

UNIT = Domain(0.0, 1.0)


def three_points() -> Dataset:
    return Dataset(t=[0.2, 0.5, 0.8], x=[-0.8, -0.2, 0.0], domain=UNIT)


def gaussian_grid(center: float, sd: float, half_width: float, nodes: int = 4001) -> UPosteriorGrid:
    """密度が厳密に N(center, sd²) のグリッド"""
    u = np.linspace(center - half_width, center + half_width, nodes)
    density = stats.norm.pdf(u, center, sd)
    density = density / np.dot(trapezoid_weights(u), density)
    return UPosteriorGrid(u_nodes=u, log_weights=np.log(density), normalized=density)


def centered_fit(u_hat: float) -> FitResult:
    return FitResult(theta_hat=Theta(1.0, u_hat, 1.0), rss=1.0, loglik=0.0, active_count=1, n=100)


class TestConjugate:
    """条件付き共役更新と u グリッドのテスト"""

    @classmethod
    def setup_class(cls):
        cls.prior = Prior(domain=UNIT)

    def test_single_node_grid(self):
        """1ノードのグリッドは点質量"""
        grid = u_marginal_log_posterior(three_points(), self.prior, [0.6])
        assert grid.normalized[0] == pytest.approx(1.0)
        print("✓ 1ノードのグリッド")

    def test_grid_is_normalized(self):
        """台形則での積分は 1"""
        data = simulate_replicate_data(Theta(2.0, 0.5, 0.25), LimitDesign(UNIT), 200, seed=1, rep_id=0)
        grid = u_marginal_log_posterior(data, self.prior, np.linspace(0, 1, 1001))
        assert np.dot(grid.quadrature, grid.normalized) == pytest.approx(1.0, abs=1e-10)
        assert grid.cdf(1.0)[0] == pytest.approx(1.0)
        assert grid.ppf(0.5)[0] == pytest.approx(float(grid.ppf(grid.cdf(grid.ppf(0.5)))[0]), abs=1e-9)
        print("✓ グリッドの正規化")

    def test_rejects_bad_nodes(self):
        data = three_points()
        with pytest.raises(PreconditionError):
            u_marginal_log_posterior(data, self.prior, [0.5, 0.4])
        with pytest.raises(PreconditionError):
            u_marginal_log_posterior(data, self.prior, [0.5, 1.5])

    def test_marginal_likelihood_matches_quadrature(self):
        """閉形式の周辺尤度 m(u) は (γ, σ²) の二重積分と一致する"""
        rng = np.random.default_rng(4)
        data = Dataset(t=rng.random(5), x=rng.normal(size=5), domain=UNIT)
        prior = Prior(domain=UNIT, m0=0.5, k0=1.0, a0=3.0, b0=1.0)
        u = 0.7
        update = conjugate_update(data, prior, u)
        mn, kn = float(update.gamma_mean[0]), float(update.precision[0])

        def integrand(gamma, sigma2):
            theta = Theta(gamma, u, sigma2)
            log_prior_gamma = (-0.5 * math.log(2 * math.pi * sigma2 / prior.k0)
                               - prior.k0 * (gamma - prior.m0) ** 2 / (2 * sigma2))
            log_prior_sigma2 = (prior.a0 * math.log(prior.b0) - math.lgamma(prior.a0)
                                - (prior.a0 + 1) * math.log(sigma2) - prior.b0 / sigma2)
            return math.exp(log_likelihood(theta, data) + log_prior_gamma + log_prior_sigma2)

        value, _ = integrate.dblquad(
            integrand, 0.0, np.inf,
            lambda s: mn - 12 * math.sqrt(s / kn), lambda s: mn + 12 * math.sqrt(s / kn),
            epsabs=0.0, epsrel=1e-7,
        )
        closed = math.exp(float(update.log_marginal[0]))
        assert closed == pytest.approx(value, rel=1e-4), f"閉形式 {closed} vs 求積 {value}"
        print(f"✓ 周辺尤度: {closed:.6e}")

    def test_sign_flip_symmetry(self):
        """m0 = 0 では x → −x の鏡像データで u の事後重みは変わらない（γ の符号反転で吸収）"""
        data = simulate_replicate_data(Theta(2.0, 0.5, 0.25), LimitDesign(UNIT), 150, seed=6, rep_id=0)
        mirrored = Dataset(t=data.t, x=-data.x, domain=UNIT)
        prior = Prior(domain=UNIT, m0=0.0, u_kind="truncnorm", u_scale=0.3)
        nodes = np.linspace(0.0, 1.0, 2001)

        grid = u_marginal_log_posterior(data, prior, nodes)
        mirror_grid = u_marginal_log_posterior(mirrored, prior, nodes)
        assert np.allclose(grid.normalized, mirror_grid.normalized, rtol=1e-8, atol=1e-8)

        summary = bayes_estimator(grid, data, prior)
        mirror_summary = bayes_estimator(mirror_grid, mirrored, prior)
        assert mirror_summary.theta_bayes.gamma == pytest.approx(-summary.theta_bayes.gamma, rel=1e-8)
        assert mirror_summary.theta_bayes.u == pytest.approx(summary.theta_bayes.u, rel=1e-8)
        print("✓ 符号反転に対する対称性")

    def test_grid_self_convergence(self):
        """û ± 10 標準偏差のグリッドを2倍に細かくしても事後平均は 1e-8 の範囲で不変"""
        data = simulate_replicate_data(Theta(2.0, 0.5, 0.25), LimitDesign(UNIT), 500, seed=13, rep_id=0)
        fit = fit_mle(data)
        assert not fit.is_flagged
        sd_u = math.sqrt(fit.cov_hat[1, 1])
        lo, hi = max(0.0, fit.theta_hat.u - 10 * sd_u), min(1.0, fit.theta_hat.u + 10 * sd_u)
        prior = Prior(domain=UNIT)

        means = []
        for nodes in (4001, 8001):
            grid = u_marginal_log_posterior(data, prior, np.linspace(lo, hi, nodes))
            assert (hi - lo) / (nodes - 1) < sd_u / 10
            means.append(bayes_estimator(grid, data, prior).theta_bayes.as_array())
        diff = np.abs(means[1] - means[0])
        assert np.all(diff <= 1e-8 * (1.0 + np.abs(means[1]))), f"グリッド細分化での変化: {diff}"
        print(f"✓ グリッドの自己収束: {diff}")


class TestBayesEstimator:
    """事後平均とサンプリングのテスト"""

    def test_single_node_closed_form(self):
        """u を 0.6 に固定した事後平均は共役公式どおり"""
        prior = Prior(domain=UNIT, m0=0.0, k0=0.01, a0=2.1, b0=0.1)
        data = three_points()
        grid = u_marginal_log_posterior(data, prior, [0.6])
        summary = bayes_estimator(grid, data, prior)

        kn = 0.01 + 0.17
        mn = 0.34 / kn
        bn = 0.1 + 0.5 * (0.68 - kn * mn ** 2)
        assert summary.theta_bayes.gamma == pytest.approx(mn)
        assert summary.theta_bayes.u == pytest.approx(0.6)
        assert summary.theta_bayes.sigma2 == pytest.approx(bn / (2.1 + 1.5 - 1.0))
        print(f"✓ 1ノードの事後平均: {summary.theta_bayes}")

    def test_heavy_tailed_prior_rejected(self):
        """a0 ≤ 1 では事後平均を計算しない"""
        prior = Prior(domain=UNIT, a0=1.0)
        data = three_points()
        grid = u_marginal_log_posterior(data, prior, [0.6])
        with pytest.raises(PreconditionError):
            bayes_estimator(grid, data, prior)

    def test_sampling_deterministic_and_consistent(self):
        """同じシードで同じ抽出、標本平均は事後平均の近く"""
        prior = Prior(domain=UNIT)
        data = simulate_replicate_data(Theta(2.0, 0.5, 0.25), LimitDesign(UNIT), 300, seed=2, rep_id=0)
        fit = fit_mle(data)
        grid = u_marginal_log_posterior(data, prior, default_u_nodes(fit, UNIT))
        summary = bayes_estimator(grid, data, prior)

        draws = 100000
        first = sample_posterior(grid, data, prior, draws, seed=42)
        second = sample_posterior(grid, data, prior, draws, seed=42)
        assert np.array_equal(first, second), "同じシードで抽出が異なる"
        assert first.shape == (draws, 3)

        se = summary.sd / math.sqrt(draws)
        gap = np.abs(first.mean(axis=0) - summary.theta_bayes.as_array())
        assert np.all(gap < 4 * se), f"標本平均と事後平均の差: {gap} (SE {se})"
        print(f"✓ 事後サンプリング: 差 {gap}")

    def test_fixed_u_draws_match_conjugate_moments(self):
        """u を固定した抽出の (γ, σ²) の平均・分散は NIG 更新の閉形式と 3 標準誤差以内で一致"""
        prior = Prior(domain=UNIT, m0=0.5, k0=0.1, a0=3.0, b0=0.2)
        data = simulate_replicate_data(Theta(2.0, 0.5, 0.25), LimitDesign(UNIT), 100, seed=14, rep_id=0)
        grid = u_marginal_log_posterior(data, prior, [0.45])
        update = conjugate_update(data, prior, 0.45)
        mn, kn, bn = float(update.gamma_mean[0]), float(update.precision[0]), float(update.rate[0])
        an = update.shape

        mean_sigma2 = bn / (an - 1.0)
        var_sigma2 = mean_sigma2 ** 2 / (an - 2.0)
        var_gamma = mean_sigma2 / kn

        draws = 100000
        samples = sample_posterior(grid, data, prior, draws, seed=77)
        gamma, sigma2 = samples[:, 0], samples[:, 2]
        assert np.all(samples[:, 1] == 0.45)

        se = math.sqrt(var_gamma / draws)
        assert abs(gamma.mean() - mn) < 3 * se, f"γ の平均: {gamma.mean()} vs {mn} (SE {se})"
        se = math.sqrt(var_sigma2 / draws)
        assert abs(sigma2.mean() - mean_sigma2) < 3 * se, f"σ² の平均: {sigma2.mean()} vs {mean_sigma2} (SE {se})"

        for values, expected in ((gamma, var_gamma), (sigma2, var_sigma2)):
            sq = (values - values.mean()) ** 2
            se_var = sq.std() / math.sqrt(draws)
            assert abs(sq.mean() - expected) < 3 * se_var, f"分散: {sq.mean()} vs {expected} (SE {se_var})"
        print(f"✓ 共役更新の厳密性: γ̃={mn:.4f}, E[σ²]={mean_sigma2:.4f}")

    def test_prior_washout(self):
        """データから遠い事前平均の影響は k0, b0 → 0 で消える"""
        data = simulate_replicate_data(Theta(2.0, 0.5, 0.25), LimitDesign(UNIT), 300, seed=15, rep_id=0)
        fit = fit_mle(data)
        assert not fit.is_flagged

        gaps = []
        for k in (1.0, 1e-1, 1e-4):
            prior = Prior(domain=UNIT, m0=-50.0, k0=k, b0=k)
            grid = u_marginal_log_posterior(data, prior, default_u_nodes(fit, UNIT))
            theta_bayes = bayes_estimator(grid, data, prior).theta_bayes
            gaps.append(float(np.linalg.norm(theta_bayes.as_array() - fit.theta_hat.as_array())))
        assert gaps[0] > gaps[1] > gaps[2], f"事前分布の影響が減少しない: {gaps}"
        assert gaps[2] < 0.25 * gaps[0]
        print(f"✓ 事前分布の影響の消失: {gaps}")

    def test_moment_order(self):
        assert Prior(domain=UNIT, a0=2.1).moment_order == 2
        assert Prior(domain=UNIT, a0=3.0).moment_order == 2
        assert Prior(domain=UNIT, a0=1.0).moment_order == 0


class TestBvm:
    """BvM 距離と事後集中度のテスト"""

    @classmethod
    def setup_class(cls):
        cls.info = InfoMatrix(np.eye(3))
        cls.n = 100

    def test_identical_density(self):
        """事後が漸近正規分布そのものなら距離 0"""
        grid = gaussian_grid(0.5, 0.1, 0.8)
        distance = bvm_l1_u(grid, centered_fit(0.5), self.info, self.n)
        assert distance < 1e-6, f"距離が 0 でない: {distance}"
        print(f"✓ 同一分布の距離: {distance:.2e}")

    def test_doubled_variance(self):
        """N(0, 2) と N(0, 1) の L1 距離は 4(Φ(x*) − Φ(x*/√2))、x* = √(2 log 2)"""
        grid = gaussian_grid(0.5, math.sqrt(2) * 0.1, 1.2, nodes=8001)
        distance = bvm_l1_u(grid, centered_fit(0.5), self.info, self.n)

        x_star = math.sqrt(2 * math.log(2))
        expected = 4 * (stats.norm.cdf(x_star) - stats.norm.cdf(x_star / math.sqrt(2)))
        assert distance == pytest.approx(expected, abs=1e-4)
        assert 0 <= distance <= 2
        print(f"✓ 分散2倍の距離: {distance:.4f} (期待値 {expected:.4f})")

    def test_coverage_error(self):
        """±6 標準偏差を覆わないグリッドは拒否"""
        grid = gaussian_grid(0.5, 0.1, 0.3)
        with pytest.raises(GridCoverageError):
            bvm_l1_u(grid, centered_fit(0.5), self.info, self.n)
        print("✓ 被覆不足の検出")

    def test_flagged_fit_rejected(self):
        grid = gaussian_grid(0.5, 0.1, 0.8)
        fit = FitResult(theta_hat=Theta(1.0, 0.5, 0.0), rss=0.0, loglik=math.inf, active_count=1, n=100,
                        flags=frozenset({"sigma2_zero"}))
        with pytest.raises(FlaggedFitError):
            bvm_l1_u(grid, fit, self.info, self.n)

    def test_posterior_mass_near(self):
        """正規分布のグリッドで ±1 標準偏差の確率は約 0.6827"""
        grid = gaussian_grid(0.5, 0.1, 0.8)
        mass = posterior_mass_near(grid, 0.5, 0.1)
        assert mass == pytest.approx(0.682689, abs=1e-4)
        assert posterior_mass_near(grid, 0.5, 10.0) == pytest.approx(1.0)


class TestMetropolis:
    """ランダムウォーク・メトロポリス法のテスト"""

    @classmethod
    def setup_class(cls):
        cls.prior = Prior(domain=UNIT)
        cls.data = simulate_replicate_data(Theta(2.0, 0.5, 0.25), LimitDesign(UNIT), 200, seed=3, rep_id=0)

    def test_zero_draws(self):
        result = rwm_sampler(self.data, self.prior.log_density, 0, seed=1, step=[0.1, 0.02, 0.1])
        assert result.draws.shape == (0, 3)

    def test_deterministic(self):
        a = rwm_sampler(self.data, self.prior.log_density, 200, seed=5, step=[0.1, 0.02, 0.1], adapt_window=200)
        b = rwm_sampler(self.data, self.prior.log_density, 200, seed=5, step=[0.1, 0.02, 0.1], adapt_window=200)
        assert np.array_equal(a.draws, b.draws)
        assert 0 < a.acceptance_rate <= 1

    def test_agrees_with_conjugate_posterior(self):
        """共役事後の u 平均と一致する（MCMC の自己相関を見込んだ許容幅）"""
        fit = fit_mle(self.data)
        grid = u_marginal_log_posterior(self.data, self.prior, default_u_nodes(fit, UNIT))
        summary = bayes_estimator(grid, self.data, self.prior)

        result = rwm_sampler(self.data, self.prior.log_density, 5000, seed=11,
                             step=[0.2, 0.02, 0.1], adapt_window=1000)
        u_mean = result.draws[:, 1].mean()
        assert abs(u_mean - summary.theta_bayes.u) < 0.5 * summary.sd[1], (
            f"RWM {u_mean} vs 共役 {summary.theta_bayes.u} (sd {summary.sd[1]})"
        )
        print(f"✓ RWM と共役事後の一致 (受理率 {result.acceptance_rate:.3f})")

    def test_step_too_large(self):
        """適応期間に一度も受理されなければ StepSizeError"""
        with pytest.raises(StepSizeError):
            rwm_sampler(self.data, self.prior.log_density, 10, seed=1, step=[1e6, 1e6, 1e6], adapt_window=50)

    def test_bad_step(self):
        with pytest.raises(PreconditionError):
            rwm_sampler(self.data, self.prior.log_density, 10, seed=1, step=[0.1, -0.1, 0.1])
