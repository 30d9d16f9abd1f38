"""
YAML 設定ファイルの読み込みと検証

未知のキーはエラーとし、計算を始める前にすべての値を検証する。
"""

import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, Extra, ValidationError, root_validator, validator

from config.settings import settings
from errors import ConfigError, PreconditionError
from model.types import Domain, LimitDesign, Theta
from posterior.conjugate import Prior
from pseudo.window import WindowRule
from simulate.diagnostics import AcceptanceTolerances
from simulate.generators import PeriodicDesign
from simulate.study import Scenario

logger = logging.getLogger(__name__)


class StrictModel(BaseModel):
    class Config:
        extra = Extra.forbid


class DomainConfig(StrictModel):
    u_lower: float = 0.0
    u_upper: float = 1.0

    @root_validator(skip_on_failure=True)
    def check_order(cls, values):
        if not values["u_lower"] < values["u_upper"]:
            raise ValueError(f"u_lower < u_upper が必要です: {values}")
        return values


class ThetaConfig(StrictModel):
    gamma: float
    u: float
    sigma2: float

    @validator("sigma2")
    def check_sigma2(cls, v):
        if v < 0:
            raise ValueError("sigma2 は非負である必要があります")
        return v


class DesignConfig(StrictModel):
    """温度デザイン（uniform / truncnorm / periodic）"""
    kind: str = "uniform"
    loc: float = 0.0
    scale: float = 1.0
    period: Optional[int] = None
    pattern: Optional[List[float]] = None
    jitter_sd: float = 0.0

    @validator("kind")
    def check_kind(cls, v):
        if v not in ("uniform", "truncnorm", "periodic"):
            raise ValueError(f"未対応のデザイン種別です: {v}")
        return v

    @validator("scale")
    def check_scale(cls, v):
        if not v > 0:
            raise ValueError("scale は正である必要があります")
        return v

    @validator("jitter_sd")
    def check_jitter(cls, v):
        if v < 0:
            raise ValueError("jitter_sd は非負である必要があります")
        return v

    @root_validator(skip_on_failure=True)
    def check_periodic(cls, values):
        if values["kind"] == "periodic":
            if values.get("pattern") is None and values.get("period") is None:
                raise ValueError("periodic デザインには period または pattern が必要です")
            if values.get("period") is not None and values["period"] < 1:
                raise ValueError("period は 1 以上が必要です")
        return values


class PriorConfig(StrictModel):
    """π(u) × NIG(m0, k0, a0, b0)"""
    u_kind: str = "uniform"
    u_loc: Optional[float] = None
    u_scale: float = 1.0
    m0: float = 0.0
    k0: float = 0.01
    a0: float = 2.1
    b0: float = 0.1

    @validator("u_kind")
    def check_u_kind(cls, v):
        if v not in ("uniform", "truncnorm"):
            raise ValueError(f"未対応の u 事前分布です: {v}")
        return v

    @validator("k0", "a0", "b0", "u_scale")
    def check_positive(cls, v, field):
        if not v > 0:
            raise ValueError(f"{field.name} は正である必要があります")
        return v


class WindowConfig(StrictModel):
    kind: str = "power"
    alpha: float = 0.25
    scale: Optional[float] = None

    @validator("kind")
    def check_kind(cls, v):
        if v not in ("power", "loginv"):
            raise ValueError(f"未対応の窓規則です: {v}")
        return v

    @validator("alpha")
    def check_alpha(cls, v):
        if not 0 < v < 0.5:
            raise ValueError("alpha は (0, 1/2) の範囲が必要です")
        return v


class AcceptanceConfig(StrictModel):
    """受け入れ基準の上書き（省略時は既定値）"""
    rate_slope: Optional[Tuple[float, float]] = None
    frobenius: Optional[float] = None
    ks: Optional[float] = None
    coverage: Optional[Tuple[float, float]] = None
    bvm_max: Optional[float] = None
    bayes_gap_max: Optional[float] = None
    posterior_mass_min: Optional[float] = None
    deleted_fraction_rel: Optional[float] = None
    failure_rate_max: Optional[float] = None


class ScenarioConfig(StrictModel):
    name: str = "scenario"
    theta0: ThetaConfig
    design: DesignConfig = DesignConfig()
    n_grid: List[int]
    replicates: int
    seed: Optional[int] = None
    outputs: List[str] = ["mle"]
    acceptance: AcceptanceConfig = AcceptanceConfig()

    @validator("n_grid")
    def check_n_grid(cls, v):
        if not v:
            raise ValueError("n_grid が空です")
        if any(b <= a for a, b in zip(v[:-1], v[1:])):
            raise ValueError("n_grid は狭義単調増加である必要があります")
        if v[0] < 3:
            raise ValueError("n_grid の各値は 3 以上が必要です")
        return v

    @validator("replicates")
    def check_replicates(cls, v):
        if v < 1:
            raise ValueError("replicates は 1 以上が必要です")
        return v

    @validator("outputs", each_item=True)
    def check_outputs(cls, v):
        if v not in ("mle", "posterior", "pseudo"):
            raise ValueError(f"未対応の出力種別です: {v}")
        return v


class PosteriorConfig(StrictModel):
    """posterior コマンドの設定"""
    draws: int = 0
    grid_csv: str = "u_grid.csv"
    summary_json: str = "posterior_summary.json"
    draws_csv: str = "posterior_draws.csv"

    @validator("draws")
    def check_draws(cls, v):
        if v < 0:
            raise ValueError("draws は非負である必要があります")
        return v


class OutputConfig(StrictModel):
    dir: Optional[str] = None
    report_json: str = "study_report.json"
    records_csv: Optional[str] = "study_records.csv"


class AppConfig(StrictModel):
    """設定ファイル全体"""
    seed: Optional[int] = None
    workers: Optional[int] = None
    domain: DomainConfig = DomainConfig()
    prior: PriorConfig = PriorConfig()
    window: WindowConfig = WindowConfig()
    posterior: PosteriorConfig = PosteriorConfig()
    scenario: Optional[ScenarioConfig] = None
    output: OutputConfig = OutputConfig()

    @validator("workers")
    def check_workers(cls, v):
        if v is not None and v < 1:
            raise ValueError("workers は 1 以上が必要です")
        return v


def _format_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        location = ".".join(str(p) for p in err["loc"])
        parts.append(f"{location}: {err['msg']}")
    return "; ".join(parts)


def parse_config(raw: Optional[dict]) -> AppConfig:
    """辞書から AppConfig を検証付きで構築する"""
    try:
        return AppConfig.parse_obj(raw or {})
    except ValidationError as e:
        raise ConfigError(f"設定の検証に失敗しました: {_format_validation_error(e)}") from e


def load_config(path: Union[str, Path]) -> AppConfig:
    """
    YAML 設定ファイルを読み込む

    Args:
        path: 設定ファイルのパス

    Returns:
        AppConfig: 検証済みの設定

    Raises:
        ConfigError: ファイルが無い・YAML として読めない・検証に失敗した場合
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"設定ファイルが見つかりません: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML の解析に失敗しました: {path} - {e}") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"設定ファイルの最上位はマッピングである必要があります: {path}")

    config = parse_config(raw)
    logger.debug(f"設定読み込み完了: {path}")
    return config


def build_domain(config: AppConfig) -> Domain:
    return Domain(u_lower=config.domain.u_lower, u_upper=config.domain.u_upper)


def build_prior(config: AppConfig) -> Prior:
    p = config.prior
    return Prior(domain=build_domain(config), m0=p.m0, k0=p.k0, a0=p.a0, b0=p.b0,
                 u_kind=p.u_kind, u_loc=p.u_loc, u_scale=p.u_scale)


def build_window(config: AppConfig) -> WindowRule:
    w = config.window
    return WindowRule(kind=w.kind, alpha=w.alpha, scale=w.scale)


def build_design(config: AppConfig, design: DesignConfig):
    domain = build_domain(config)
    if design.kind == "periodic":
        if design.pattern is not None:
            return PeriodicDesign(domain=domain, pattern=tuple(design.pattern), jitter_sd=design.jitter_sd)
        return PeriodicDesign.equispaced(domain, design.period, design.jitter_sd)
    return LimitDesign(domain=domain, kind=design.kind, loc=design.loc, scale=design.scale)


def build_tolerances(config: AppConfig) -> AcceptanceTolerances:
    if config.scenario is None:
        return AcceptanceTolerances()
    overrides = {k: v for k, v in config.scenario.acceptance.dict().items() if v is not None}
    return AcceptanceTolerances(**overrides)


def build_scenario(config: AppConfig, seed: Optional[int] = None) -> Scenario:
    """
    設定から Scenario を組み立てる

    シードの優先順位: 引数 > scenario.seed > 最上位 seed > 環境変数 (settings.seed)

    Raises:
        ConfigError: scenario ブロックが無い、または値が前提条件を満たさない場合
    """
    sc = config.scenario
    if sc is None:
        raise ConfigError("設定に scenario ブロックがありません")
    if seed is None:
        seed = sc.seed if sc.seed is not None else config.seed
    if seed is None:
        seed = settings.seed
    try:
        return Scenario(
            theta0=Theta(gamma=sc.theta0.gamma, u=sc.theta0.u, sigma2=sc.theta0.sigma2),
            design=build_design(config, sc.design),
            n_grid=tuple(sc.n_grid),
            replicates=sc.replicates,
            seed=seed,
            prior=build_prior(config),
            window_rule=build_window(config),
            outputs=frozenset(sc.outputs),
            name=sc.name,
        )
    except PreconditionError as e:
        raise ConfigError(f"シナリオが不正です: {e}") from e
