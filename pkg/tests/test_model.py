"""
model パッケージ（基本データ型・尤度・乖離関数・CSV 読み込み）の単体テスト
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# srcディレクトリをパスに追加
project_root = Path(__file__).parent.parent
src_path = project_root / "src"
sys.path.insert(0, str(src_path))

from errors import DataFormatError, PreconditionError
from model.ingest import read_dataset_csv
from model.likelihood import (
    discrepancy_b, discrepancy_b_n, ecdf, log_likelihood, log_likelihood_terms, mu, sigma2_decomposition,
    sup_cdf_deviation, sup_nu,
)
from model.quadrature import design_integral
from model.types import Dataset, Domain, LimitDesign, Theta

UNIT = Domain(0.0, 1.0)


class TestTypes:
    """Domain・Theta・Dataset・LimitDesign のテスト"""

    def test_domain_rejects_reversed_bounds(self):
        """u_lower ≥ u_upper は拒否"""
        with pytest.raises(PreconditionError):
            Domain(1.0, 1.0)
        with pytest.raises(PreconditionError):
            Domain(2.0, 1.0)
        print("✓ 不正な定義域を拒否")

    def test_theta_reparametrization(self):
        """β = −γu と (β, γ) からの復元"""
        theta = Theta(gamma=2.0, u=0.6, sigma2=0.3)
        assert theta.beta == pytest.approx(-1.2)
        back = Theta.from_tau(theta.beta, theta.gamma, theta.sigma2)
        assert back.u == pytest.approx(0.6), f"u の復元が不正: {back.u}"

        with pytest.raises(PreconditionError):
            Theta.from_tau(1.0, 0.0, 1.0)
        print("✓ 再パラメータ化")

    def test_theta_identifiability(self):
        """γ≠0, σ²>0, u が内部のときのみ識別可能"""
        assert Theta(2.0, 0.5, 1.0).is_identifiable(UNIT)
        assert not Theta(0.0, 0.5, 1.0).is_identifiable(UNIT)
        assert not Theta(2.0, 0.5, 0.0).is_identifiable(UNIT)
        assert not Theta(2.0, 1.0, 1.0).is_identifiable(UNIT)

        with pytest.raises(PreconditionError):
            Theta(1.0, 0.5, -1.0)
        with pytest.raises(PreconditionError):
            Theta(float("nan"), 0.5, 1.0)
        print("✓ 識別可能性の判定")

    def test_dataset_sorted_and_read_only(self):
        """温度昇順に並べ替えられ、書き換えできない"""
        data = Dataset(t=[0.8, 0.2, 0.5], x=[0.0, -0.8, -0.2], domain=UNIT)

        assert list(data.t) == [0.2, 0.5, 0.8]
        assert list(data.x) == [-0.8, -0.2, 0.0], "x が t と一緒に並べ替えられていない"
        assert data.n == 3
        with pytest.raises(ValueError):
            data.t[0] = 0.0
        print("✓ データセットの整列と読み取り専用化")

    def test_dataset_validation(self):
        """長さ不一致・定義域外・非有限値は拒否"""
        with pytest.raises(PreconditionError):
            Dataset(t=[0.1, 0.2], x=[1.0], domain=UNIT)
        with pytest.raises(PreconditionError):
            Dataset(t=[0.1, 1.5], x=[1.0, 2.0], domain=UNIT)
        with pytest.raises(PreconditionError):
            Dataset(t=[0.1, 0.2], x=[1.0, float("inf")], domain=UNIT)
        with pytest.raises(PreconditionError):
            Dataset(t=[], x=[], domain=UNIT)
        print("✓ データセットの検証")

    def test_limit_designs_are_distributions(self):
        """各デザインの cdf は端点で 0 と 1、密度の積分は 1"""
        designs = [
            LimitDesign(UNIT),
            LimitDesign(UNIT, kind="truncnorm", loc=0.4, scale=0.3),
            LimitDesign(UNIT, kind="periodic", scale=0.05, pattern=(0.125, 0.375, 0.625, 0.875)),
        ]
        for design in designs:
            assert design.cdf(0.0) == pytest.approx(0.0, abs=1e-12)
            assert design.cdf(1.0) == pytest.approx(1.0, abs=1e-12)
            total = design_integral(lambda s: 1.0, design, breakpoints=design.pattern)
            assert total == pytest.approx(1.0, abs=1e-8), f"{design.kind}: 密度の積分 {total}"
        print("✓ 極限デザインの正規化")

    def test_periodic_ppf_inverts_cdf(self):
        """混合分布の ppf は cdf の逆関数"""
        design = LimitDesign(UNIT, kind="periodic", scale=0.05, pattern=(0.25, 0.75))
        q = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
        assert np.allclose(design.cdf(design.ppf(q)), q, atol=1e-3)
        print("✓ 混合分布の逆分布関数")

    def test_periodic_design_validation(self):
        """パターン無し・定義域外のパターンは拒否"""
        with pytest.raises(PreconditionError):
            LimitDesign(UNIT, kind="periodic", scale=0.1)
        with pytest.raises(PreconditionError):
            LimitDesign(UNIT, kind="periodic", scale=0.1, pattern=(0.5, 1.5))
        with pytest.raises(PreconditionError):
            LimitDesign(UNIT, kind="histogram")
        print("✓ デザインの検証")


class TestLikelihood:
    """回帰関数と対数尤度のテスト"""

    def test_mu_examples(self):
        """μ は屈折点より左で γ(t−u)、右と屈折点上で 0"""
        eta = (2.0, 0.6)
        assert mu(eta, 0.2) == pytest.approx(-0.8)
        assert mu(eta, 0.8) == 0.0
        assert mu(eta, 0.6) == 0.0
        values = mu(eta, np.array([0.2, 0.5, 0.8]))
        assert np.allclose(values, [-0.8, -0.2, 0.0])
        print("✓ 回帰関数の例")

    def test_mu_lipschitz_in_t(self):
        """|μ(η,t) − μ(η,t')| ≤ |γ|·|t − t'|"""
        rng = np.random.default_rng(0)
        eta = (-3.0, 0.4)
        t1, t2 = rng.random(1000), rng.random(1000)
        diff = np.abs(mu(eta, t1) - mu(eta, t2))
        assert np.all(diff <= 3.0 * np.abs(t1 - t2) + 1e-12)
        print("✓ リプシッツ性")

    def test_mu_lipschitz_in_eta(self):
        """sup_t |μ(η,t) − μ(η',t)| ≤ C‖η − η'‖、C = 定義域幅 + max|γ| + max|u|"""
        rng = np.random.default_rng(12)
        t = np.linspace(UNIT.u_lower, UNIT.u_upper, 10001)
        gamma_max, u_max = 3.0, 1.0
        c = UNIT.width + gamma_max + u_max
        for _ in range(500):
            eta = (rng.uniform(-gamma_max, gamma_max), rng.uniform(0.0, u_max))
            other = (rng.uniform(-gamma_max, gamma_max), rng.uniform(0.0, u_max))
            sup = float(np.max(np.abs(mu(eta, t) - mu(other, t))))
            bound = c * math.hypot(eta[0] - other[0], eta[1] - other[1])
            assert sup <= bound + 1e-12, f"η={eta}, η'={other}: {sup} > {bound}"
        print(f"✓ η についてのリプシッツ性 (C={c})")

    def test_log_likelihood_examples(self):
        """残差ゼロ・残差1・3点の例"""
        one = Dataset(t=[0.2], x=[0.0], domain=UNIT)
        theta = Theta(gamma=0.0, u=0.5, sigma2=1.0)
        assert log_likelihood(theta, one) == pytest.approx(-0.5 * math.log(2 * math.pi))

        shifted = Dataset(t=[0.2], x=[1.0], domain=UNIT)
        assert log_likelihood(theta, shifted) == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5)

        three = Dataset(t=[0.2, 0.5, 0.8], x=[-0.8, -0.2, 0.0], domain=UNIT)
        exact = Theta(gamma=2.0, u=0.6, sigma2=1.0)
        assert log_likelihood(exact, three) == pytest.approx(-1.5 * math.log(2 * math.pi))
        assert log_likelihood_terms(exact, three).sum() == pytest.approx(log_likelihood(exact, three))
        print("✓ 対数尤度の例")

    def test_log_likelihood_requires_positive_variance(self):
        """σ² = 0 では評価しない"""
        data = Dataset(t=[0.2], x=[0.0], domain=UNIT)
        with pytest.raises(PreconditionError):
            log_likelihood(Theta(1.0, 0.5, 0.0), data)
        print("✓ σ² = 0 を拒否")

    def test_log_likelihood_permutation_invariant(self):
        """観測の並べ替えで値は変わらない"""
        rng = np.random.default_rng(1)
        t, x = rng.random(50), rng.normal(size=50)
        theta = Theta(1.5, 0.4, 0.7)
        perm = rng.permutation(50)
        a = log_likelihood(theta, Dataset(t=t, x=x, domain=UNIT))
        b = log_likelihood(theta, Dataset(t=t[perm], x=x[perm], domain=UNIT))
        assert a == pytest.approx(b, rel=1e-14)
        print("✓ 置換不変性")


class TestEmpiricalDistribution:
    """経験分布関数と sup 偏差のテスト"""

    def test_ecdf_examples(self):
        """F_n は右連続"""
        data = Dataset(t=[0.1, 0.2, 0.3], x=[0.0, 0.0, 0.0], domain=UNIT)
        fn = ecdf(data)
        assert fn(0.2) == pytest.approx(2 / 3)
        assert fn(0.05) == 0.0
        assert fn(0.3) == 1.0
        print("✓ 経験分布関数の例")

    def test_sup_deviation_for_quantile_design(self):
        """一様分位点の温度では sup 偏差は 1/(2n)"""
        n = 1000
        t = (np.arange(1, n + 1) - 0.5) / n
        data = Dataset(t=t, x=np.zeros(n), domain=UNIT)
        deviation = sup_cdf_deviation(data, LimitDesign(UNIT))
        assert deviation < 0.01, f"sup 偏差が大きすぎる: {deviation}"
        print(f"✓ 分位点デザインの sup 偏差: {deviation:.5f}")

    def test_sup_deviation_single_point(self):
        """1点 m の経験分布と一様分布の差は max(m, 1−m)"""
        data = Dataset(t=[0.3], x=[0.0], domain=UNIT)
        deviation = sup_cdf_deviation(data, LimitDesign(UNIT))
        assert deviation == pytest.approx(0.7, abs=1e-3)
        print("✓ 1点データの sup 偏差")


class TestDiscrepancy:
    """乖離関数と σ̂² の分解のテスト"""

    @classmethod
    def setup_class(cls):
        rng = np.random.default_rng(7)
        cls.theta0 = Theta(gamma=2.0, u=0.5, sigma2=0.25)
        t = rng.random(400)
        x = mu(cls.theta0.eta, t) + 0.5 * rng.standard_normal(400)
        cls.data = Dataset(t=t, x=x, domain=UNIT)

    def test_b_n_zero_at_truth(self):
        """b_n(θ0) = 0"""
        assert discrepancy_b_n(self.theta0, self.theta0, self.data) == pytest.approx(0.0, abs=1e-14)
        print("✓ b_n(θ0) = 0")

    def test_b_n_variance_term(self):
        """η = η0, σ² = e·σ0² のとき b_n = 1/e"""
        theta = Theta(gamma=2.0, u=0.5, sigma2=math.e * 0.25)
        assert discrepancy_b_n(theta, self.theta0, self.data) == pytest.approx(1 / math.e, rel=1e-12)
        print("✓ b_n の分散項")

    def test_b_uniform_example(self):
        """一様デザインで γ だけ 1 ずれると b = ∫_0^{1/2}(t−1/2)² dt = 1/24"""
        design = LimitDesign(UNIT)
        theta0 = Theta(1.0, 0.5, 1.0)
        theta = Theta(2.0, 0.5, 1.0)
        assert discrepancy_b(theta, theta0, design) == pytest.approx(1 / 24, rel=1e-8)
        assert discrepancy_b(theta0, theta0, design) == pytest.approx(0.0, abs=1e-12)
        print("✓ 母集団乖離関数の例")

    def test_b_n_nonnegative_random(self):
        """ランダムな θ, θ0, データで b_n ≥ 0"""
        rng = np.random.default_rng(21)
        for _ in range(300):
            n = int(rng.integers(1, 60))
            data = Dataset(t=rng.random(n), x=rng.normal(size=n), domain=UNIT)
            theta0 = Theta(rng.uniform(-3, 3), rng.uniform(0, 1), rng.uniform(0.01, 3.0))
            theta = Theta(rng.uniform(-3, 3), rng.uniform(0, 1), rng.uniform(0.01, 3.0))
            value = discrepancy_b_n(theta, theta0, data)
            assert value >= -1e-12, f"b_n が負: {value} (θ={theta}, θ0={theta0})"
        print("✓ b_n の非負性")

    def test_b_positive_away_from_truth(self):
        """θ0 をランダムにずらした θ ≠ θ0 では b > 0"""
        design = LimitDesign(UNIT)
        rng = np.random.default_rng(22)
        base = self.theta0.as_array()
        for _ in range(30):
            step = rng.normal(size=3)
            step *= rng.uniform(0.02, 0.3) / np.linalg.norm(step)
            gamma, u, sigma2 = base + step
            theta = Theta(gamma, float(np.clip(u, 0.05, 0.95)), max(sigma2, 0.01))
            assert discrepancy_b(theta, self.theta0, design) > 0, f"b が正でない: {theta}"
        print("✓ b の正値性")

    def test_sigma2_decomposition_sums_to_rss(self):
        """3項の和は η̂ での残差平方和 / n"""
        eta_hat = (1.9, 0.52)
        parts = sigma2_decomposition(eta_hat, self.theta0, self.data)
        r = self.data.x - mu(eta_hat, self.data.t)
        assert parts["total"] == pytest.approx(np.dot(r, r) / self.data.n, rel=1e-12)
        assert parts["bias"] >= 0 and parts["noise"] >= 0
        print(f"✓ σ̂² の分解: {parts}")

    def test_sup_nu_zero_at_truth(self):
        """η̂ = η0 なら ν ≡ 0"""
        assert sup_nu(self.theta0.eta, self.theta0, self.data) == 0.0
        assert sup_nu((2.0, 0.6), self.theta0, self.data) > 0
        print("✓ sup|ν|")


class TestIngest:
    """CSV 読み込みのテスト"""

    def _write(self, tmp_path, text: str) -> Path:
        path = tmp_path / "data.csv"
        path.write_text(text, encoding="utf-8")
        return path

    def test_read_valid_csv(self, tmp_path):
        """空行を読み飛ばし、温度昇順で返す"""
        path = self._write(tmp_path, "t,x\n0.8,0.0\n\n0.2,-0.8\n0.5,-0.2\n")
        data = read_dataset_csv(path)
        assert data.n == 3
        assert list(data.t) == [0.2, 0.5, 0.8]
        assert data.domain == Domain(0.2, 0.8), f"定義域の推定が不正: {data.domain}"

        explicit = read_dataset_csv(path, UNIT)
        assert explicit.domain == UNIT
        print("✓ 正常な CSV の読み込み")

    def test_bad_header(self, tmp_path):
        """ヘッダー不正は1行目として報告"""
        path = self._write(tmp_path, "temp,y\n0.1,0.0\n")
        with pytest.raises(DataFormatError) as exc:
            read_dataset_csv(path)
        assert exc.value.line == 1
        print("✓ ヘッダー不正")

    def test_bad_value_reports_line(self, tmp_path):
        """数値に変換できない行の行番号を報告"""
        path = self._write(tmp_path, "t,x\n0.1,0.0\n0.2,abc\n")
        with pytest.raises(DataFormatError) as exc:
            read_dataset_csv(path)
        assert exc.value.line == 3, f"行番号が不正: {exc.value.line}"
        print("✓ 数値変換エラーの行番号")

    def test_wrong_column_count(self, tmp_path):
        path = self._write(tmp_path, "t,x\n0.1,0.0,9\n")
        with pytest.raises(DataFormatError) as exc:
            read_dataset_csv(path)
        assert exc.value.line == 2

    def test_non_utf8_reports_line(self, tmp_path):
        """UTF-8 でないバイト列は行番号付きの DataFormatError"""
        path = tmp_path / "latin1.csv"
        path.write_bytes("t,x\n0.1,0.0\n0.2,1.5°\n".encode("latin-1"))
        with pytest.raises(DataFormatError) as exc:
            read_dataset_csv(path)
        assert exc.value.line == 3, f"行番号が不正: {exc.value.line}"
        print(f"✓ 文字コード不正: {exc.value}")

    def test_identical_temperatures_need_domain(self, tmp_path):
        """温度がすべて同一なら定義域を推定できない"""
        path = self._write(tmp_path, "t,x\n0.3,1.0\n0.3,2.0\n")
        with pytest.raises(DataFormatError):
            read_dataset_csv(path)
        assert read_dataset_csv(path, UNIT).n == 2
        print("✓ 同一温度の扱い")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_dataset_csv(tmp_path / "missing.csv")
