"""
モンテカルロ検証スタディの実行

シナリオの各 n・各反復についてデータを生成し、要求されたパイプライン
（最尤推定・事後分布・擬似問題）を実行して n ごとに集計する。
反復 (n, r) の乱数は (seed, n, r) から決まるため、任意の反復を単独で再実行できる。
"""

import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

import numpy as np
import scipy
from joblib import Parallel, delayed

from errors import HockeyStickError, InsufficientReplicatesError, PreconditionError
from estimate.profile import MIN_OBSERVATIONS, fit_mle
from fisher.information import InfoMatrix, asymptotic_information, empirical_information
from fisher.wald import wald_interval
from model.likelihood import sigma2_decomposition, sup_nu
from model.types import Theta
from posterior.bvm import bvm_l1_u, posterior_mass_near
from posterior.conjugate import Prior, bayes_estimator, default_u_nodes, u_marginal_log_posterior
from pseudo.window import WindowRule, mle_gap, pseudo_problem
from simulate.generators import Design, PeriodicDesign, limit_of, simulate_replicate_data
from simulate.diagnostics import rate_slope

logger = logging.getLogger(__name__)

OUTPUT_KINDS = ("mle", "posterior", "pseudo")
WALD_LEVEL = 0.95
CONCENTRATION_RADIUS = 0.1


@dataclass(frozen=True)
class Scenario:
    """スタディの設定一式（真値・デザイン・n グリッド・反復数・シード・事前分布・窓規則・出力）"""
    theta0: Theta
    design: Design
    n_grid: Tuple[int, ...]
    replicates: int
    seed: int
    prior: Optional[Prior] = None
    window_rule: WindowRule = field(default_factory=WindowRule)
    outputs: FrozenSet[str] = frozenset({"mle"})
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "outputs", frozenset(self.outputs) | {"mle"})

        if not self.n_grid:
            raise PreconditionError("n_grid が空です")
        if any(b <= a for a, b in zip(self.n_grid[:-1], self.n_grid[1:])):
            raise PreconditionError(f"n_grid は狭義単調増加である必要があります: {self.n_grid}")
        if self.n_grid[0] < MIN_OBSERVATIONS:
            raise PreconditionError(f"n_grid の各値は {MIN_OBSERVATIONS} 以上が必要です: {self.n_grid}")
        if self.replicates < 1:
            raise PreconditionError(f"replicates は 1 以上が必要です: {self.replicates}")
        unknown = self.outputs - set(OUTPUT_KINDS)
        if unknown:
            raise PreconditionError(f"未対応の出力種別です: {sorted(unknown)}")
        # 雑音なし (σ0² = 0) の検証用シナリオも許す
        if self.theta0.gamma == 0 or not self.design.domain.is_interior(self.theta0.u):
            raise PreconditionError(f"θ0 は γ≠0 かつ u が定義域内部である必要があります: {self.theta0}")
        if "posterior" in self.outputs:
            if self.prior is None:
                object.__setattr__(self, "prior", Prior(domain=self.design.domain))
            elif self.prior.domain != self.design.domain:
                raise PreconditionError("事前分布とデザインの定義域が一致しません")

    @property
    def domain(self):
        return self.design.domain

    def to_dict(self) -> Dict[str, Any]:
        """レポートに埋め込むシナリオの写し"""
        design = self.design
        if isinstance(design, PeriodicDesign):
            design_dict = {"kind": "periodic", "pattern": list(design.pattern), "jitter_sd": design.jitter_sd}
        else:
            design_dict = {"kind": design.kind, "loc": design.loc, "scale": design.scale,
                           "pattern": list(design.pattern)}
        return {
            "name": self.name,
            "theta0": {"gamma": self.theta0.gamma, "u": self.theta0.u, "sigma2": self.theta0.sigma2},
            "domain": [self.domain.u_lower, self.domain.u_upper],
            "design": design_dict,
            "n_grid": list(self.n_grid),
            "replicates": self.replicates,
            "seed": self.seed,
            "outputs": sorted(self.outputs),
            "prior": None if self.prior is None else {
                "m0": self.prior.m0, "k0": self.prior.k0, "a0": self.prior.a0, "b0": self.prior.b0,
                "u_kind": self.prior.u_kind, "u_loc": self.prior.u_loc, "u_scale": self.prior.u_scale,
            },
            "window": {"kind": self.window_rule.kind, "alpha": self.window_rule.alpha,
                       "scale": self.window_rule.scale},
        }


@dataclass(frozen=True)
class ReplicateRecord:
    """1反復の結果"""
    n: int
    rep_id: int
    theta_hat: Theta
    errors: np.ndarray
    error_norm: float
    flags: Tuple[str, ...] = ()
    covered: Optional[Tuple[bool, bool, bool]] = None
    sigma2_terms: Optional[Dict[str, float]] = None
    sup_nu: Optional[float] = None
    theta_bayes: Optional[Theta] = None
    bvm_l1_u: Optional[float] = None
    bayes_gap: Optional[float] = None
    posterior_mass: Optional[float] = None
    theta_hat_pseudo: Optional[Theta] = None
    pseudo_flags: Tuple[str, ...] = ()
    pseudo_gap: Optional[float] = None
    deleted_fraction: Optional[float] = None
    bvm_l1_u_pseudo: Optional[float] = None

    @property
    def is_flagged(self) -> bool:
        return bool(self.flags)


@dataclass(frozen=True)
class ReplicateFailure:
    """例外で終了した反復"""
    n: int
    rep_id: int
    reason: str


@dataclass(frozen=True)
class NAggregate:
    """n ごとの集計（フラグ付き・失敗した反復は除外し件数のみ数える）"""
    n: int
    replicates: int
    used: int
    flagged: int = 0
    failed: int = 0
    median_error: Optional[float] = None
    q90_error: Optional[float] = None
    cov_sqrt_n: Optional[List[List[float]]] = None
    coverage: Optional[List[float]] = None
    median_sup_nu: Optional[float] = None
    median_bvm_l1_u: Optional[float] = None
    median_bayes_gap: Optional[float] = None
    median_posterior_mass: Optional[float] = None
    median_pseudo_gap: Optional[float] = None
    median_deleted_fraction: Optional[float] = None
    expected_deleted_fraction: Optional[float] = None
    median_bvm_l1_u_pseudo: Optional[float] = None

    @property
    def failure_rate(self) -> float:
        return (self.flagged + self.failed) / self.replicates

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result["failure_rate"] = self.failure_rate
        return result


@dataclass
class StudyReport:
    """スタディの結果"""
    scenario: Dict[str, Any]
    aggregates: List[NAggregate]
    rate_slope: Optional[float]
    failures: List[ReplicateFailure]
    meta: Dict[str, Any]
    records: List[ReplicateRecord] = field(default_factory=list)
    theta0: Optional[Theta] = None
    info0: Optional[InfoMatrix] = None

    def aggregate_for(self, n: int) -> NAggregate:
        for agg in self.aggregates:
            if agg.n == n:
                return agg
        raise KeyError(n)

    def records_for(self, n: int) -> List[ReplicateRecord]:
        return [r for r in self.records if r.n == n]

    def to_dict(self) -> Dict[str, Any]:
        """JSON 出力用（反復ごとの記録は CSV 側へ出す）"""
        return {
            "scenario": self.scenario,
            "aggregates": [agg.to_dict() for agg in self.aggregates],
            "rate_slope": self.rate_slope,
            "failures": [asdict(f) for f in self.failures],
            "meta": self.meta,
        }


def _grid_posterior(data, prior: Prior, fit, info: InfoMatrix, n: int):
    grid = u_marginal_log_posterior(data, prior, default_u_nodes(fit, data.domain))
    distance = bvm_l1_u(grid, fit, info, n, domain=data.domain)
    return grid, distance


def run_replicate(scenario: Scenario, n: int, rep_id: int,
                  info0: Optional[InfoMatrix] = None) -> ReplicateRecord:
    """
    反復 (n, rep_id) を単独で実行する

    Args:
        scenario: シナリオ
        n: 標本サイズ
        rep_id: 反復番号（0 ≤ rep_id < replicates）
        info0: BvM 距離の基準に用いる I(θ0)。None なら θ̂ での経験情報

    Returns:
        ReplicateRecord: フラグ付きの推定では後段のパイプラインを省略する
    """
    if not 0 <= rep_id < scenario.replicates:
        raise PreconditionError(f"rep_id が範囲外です: {rep_id} (replicates={scenario.replicates})")
    theta0 = scenario.theta0
    data = simulate_replicate_data(theta0, scenario.design, n, scenario.seed, rep_id)

    fit = fit_mle(data)
    errors = fit.theta_hat.as_array() - theta0.as_array()
    fields: Dict[str, Any] = {
        "n": n,
        "rep_id": rep_id,
        "theta_hat": fit.theta_hat,
        "errors": errors,
        "error_norm": float(np.linalg.norm(errors)),
        "flags": tuple(sorted(fit.flags)),
        "sigma2_terms": sigma2_decomposition(fit.theta_hat.eta, theta0, data),
        "sup_nu": sup_nu(fit.theta_hat.eta, theta0, data),
    }
    if fit.is_flagged:
        return ReplicateRecord(**fields)

    intervals = wald_interval(fit, data, WALD_LEVEL)
    truth = theta0.as_array()
    fields["covered"] = tuple(bool(lo <= v <= hi) for v, (lo, hi) in zip(truth, intervals))

    root_n = math.sqrt(n)
    want_posterior = "posterior" in scenario.outputs
    if want_posterior:
        info = info0 if info0 is not None else empirical_information(fit.theta_hat, data)
        grid, fields["bvm_l1_u"] = _grid_posterior(data, scenario.prior, fit, info, n)
        summary = bayes_estimator(grid, data, scenario.prior)
        fields["theta_bayes"] = summary.theta_bayes
        fields["bayes_gap"] = float(root_n * np.linalg.norm(
            summary.theta_bayes.as_array() - fit.theta_hat.as_array()))
        fields["posterior_mass"] = posterior_mass_near(grid, theta0.u, CONCENTRATION_RADIUS)

    if "pseudo" in scenario.outputs:
        pseudo, pseudo_fit = pseudo_problem(data, theta0.u, scenario.window_rule)
        fields["theta_hat_pseudo"] = pseudo_fit.theta_hat
        fields["pseudo_flags"] = tuple(sorted(pseudo_fit.flags))
        fields["deleted_fraction"] = pseudo_fit.n_deleted / n
        if not pseudo_fit.is_flagged:
            fields["pseudo_gap"] = float(np.linalg.norm(mle_gap(fit, pseudo_fit, n)))
            if want_posterior:
                kept = pseudo.kept
                info = info0 if info0 is not None else empirical_information(pseudo_fit.theta_hat, kept)
                # 擬似問題の事後は θ̂* を中心に測る
                _, fields["bvm_l1_u_pseudo"] = _grid_posterior(kept, scenario.prior, pseudo_fit, info, kept.n)

    return ReplicateRecord(**fields)


def _run_replicate_safe(scenario: Scenario, n: int, rep_id: int, info0: Optional[InfoMatrix]):
    try:
        return run_replicate(scenario, n, rep_id, info0), None
    except (HockeyStickError, ArithmeticError, ValueError) as e:
        return None, ReplicateFailure(n=n, rep_id=rep_id, reason=f"{type(e).__name__}: {e}")


def _median(values: List[Optional[float]]) -> Optional[float]:
    finite = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.median(finite)) if finite else None


def aggregate_n(n: int, scenario: Scenario, records: List[ReplicateRecord],
                failures: List[ReplicateFailure]) -> NAggregate:
    """1つの n についての集計"""
    used = [r for r in records if not r.is_flagged]
    norms = [r.error_norm for r in used]

    cov = None
    if len(used) >= 2:
        z = math.sqrt(n) * np.vstack([r.errors for r in used])
        cov = np.cov(z, rowvar=False).tolist()

    covered = [r.covered for r in used if r.covered is not None]
    coverage = np.mean(np.asarray(covered, dtype=float), axis=0).tolist() if covered else None

    expected_deleted = None
    limit = limit_of(scenario.design)
    if "pseudo" in scenario.outputs and limit is not None:
        expected_deleted = float(scenario.window_rule.width(n) * limit.pdf(scenario.theta0.u))

    return NAggregate(
        n=n,
        replicates=scenario.replicates,
        used=len(used),
        flagged=len(records) - len(used),
        failed=len(failures),
        median_error=_median(norms),
        q90_error=float(np.quantile(norms, 0.9)) if norms else None,
        cov_sqrt_n=cov,
        coverage=coverage,
        median_sup_nu=_median([r.sup_nu for r in used]),
        median_bvm_l1_u=_median([r.bvm_l1_u for r in used]),
        median_bayes_gap=_median([r.bayes_gap for r in used]),
        median_posterior_mass=_median([r.posterior_mass for r in used]),
        median_pseudo_gap=_median([r.pseudo_gap for r in used]),
        median_deleted_fraction=_median([r.deleted_fraction for r in used]),
        expected_deleted_fraction=expected_deleted,
        median_bvm_l1_u_pseudo=_median([r.bvm_l1_u_pseudo for r in used]),
    )


def _reference_information(scenario: Scenario) -> Optional[InfoMatrix]:
    limit = limit_of(scenario.design)
    if limit is None or scenario.theta0.sigma2 == 0:
        return None
    return asymptotic_information(scenario.theta0, limit)


class StudyRunner:
    """シナリオを実行して StudyReport を組み立てる"""

    def __init__(self, scenario: Scenario, workers: int = 1):
        if workers < 1:
            raise PreconditionError(f"workers は 1 以上が必要です: {workers}")
        self.logger = logging.getLogger(__name__)
        self.scenario = scenario
        self.workers = workers
        self.stats = {"records": 0, "flagged": 0, "failed": 0, "start_time": None, "end_time": None}

    def _run_n(self, n: int, info0: Optional[InfoMatrix]):
        tasks = range(self.scenario.replicates)
        if self.workers == 1:
            results = [_run_replicate_safe(self.scenario, n, r, info0) for r in tasks]
        else:
            results = Parallel(n_jobs=self.workers, prefer="threads")(
                delayed(_run_replicate_safe)(self.scenario, n, r, info0) for r in tasks
            )
        records = sorted((rec for rec, _ in results if rec is not None), key=lambda r: r.rep_id)
        failures = sorted((f for _, f in results if f is not None), key=lambda f: f.rep_id)
        for failure in failures:
            self.logger.warning(f"反復失敗: n={failure.n}, rep={failure.rep_id} - {failure.reason}")
        return records, failures

    def run(self) -> StudyReport:
        scenario = self.scenario
        self.stats["start_time"] = time.time()
        self.logger.info(f"スタディ開始: {scenario.name} n_grid={list(scenario.n_grid)}, "
                         f"反復 {scenario.replicates}, 出力 {sorted(scenario.outputs)}, workers {self.workers}")

        info0 = _reference_information(scenario)
        all_records: List[ReplicateRecord] = []
        all_failures: List[ReplicateFailure] = []
        aggregates: List[NAggregate] = []

        for n in scenario.n_grid:
            records, failures = self._run_n(n, info0)
            agg = aggregate_n(n, scenario, records, failures)
            aggregates.append(agg)
            all_records.extend(records)
            all_failures.extend(failures)
            self.stats["records"] += len(records)
            self.stats["flagged"] += agg.flagged
            self.stats["failed"] += agg.failed
            median_text = "-" if agg.median_error is None else f"{agg.median_error:.4g}"
            self.logger.info(f"n={n} 完了: 集計 {agg.used}/{scenario.replicates}, "
                             f"フラグ {agg.flagged}, 失敗 {agg.failed}, 誤差中央値 {median_text}")

        self.stats["end_time"] = time.time()
        report = StudyReport(
            scenario=scenario.to_dict(),
            aggregates=aggregates,
            rate_slope=None,
            failures=all_failures,
            meta={
                "wall_time_sec": self.stats["end_time"] - self.stats["start_time"],
                "workers": self.workers,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "reference_information": None if info0 is None else info0.m.tolist(),
            },
            records=all_records,
            theta0=scenario.theta0,
            info0=info0,
        )

        try:
            report.rate_slope = rate_slope(report)
        except InsufficientReplicatesError as e:
            self.logger.info(f"収束率の回帰を省略: {e}")

        self.generate_final_report(report)
        return report

    def generate_final_report(self, report: StudyReport):
        """スタディ結果の要約をログに出力"""
        elapsed_minutes = (self.stats["end_time"] - self.stats["start_time"]) / 60
        total = len(self.scenario.n_grid) * self.scenario.replicates

        self.logger.info("=" * 60)
        self.logger.info(f"スタディ完了: {self.scenario.name}")
        self.logger.info("=" * 60)
        self.logger.info(f"処理時間: {elapsed_minutes:.1f}分")
        self.logger.info(f"反復総数: {total}")
        self.logger.info(f"記録: {self.stats['records']} (うちフラグ付き {self.stats['flagged']})")
        self.logger.info(f"失敗: {self.stats['failed']}")
        if report.rate_slope is not None:
            self.logger.info(f"収束率の傾き: {report.rate_slope:.4f}")
        self.logger.info("=" * 60)


def run_study(scenario: Scenario, workers: int = 1) -> StudyReport:
    """
    シナリオを実行する

    各反復の失敗は理由付きで記録し、スタディは中断しない。
    記録数 + 失敗数 = |n_grid| × replicates。
    """
    return StudyRunner(scenario, workers).run()
