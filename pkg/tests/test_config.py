"""
config パッケージ（YAML 設定の読み込み・検証・シナリオ構築）の単体テスト
"""

import sys
from pathlib import Path

import pytest
import yaml

# srcディレクトリをパスに追加
project_root = Path(__file__).parent.parent
src_path = project_root / "src"
sys.path.insert(0, str(src_path))

from config.scenario import (
    build_prior, build_scenario, build_tolerances, build_window, load_config, parse_config,
)
from config.settings import settings
from errors import ConfigError
from simulate.generators import PeriodicDesign


def scenario_raw(**scenario_overrides) -> dict:
    scenario = {
        "theta0": {"gamma": 2.0, "u": 0.5, "sigma2": 0.25},
        "n_grid": [50, 100, 200],
        "replicates": 10,
    }
    scenario.update(scenario_overrides)
    return {"scenario": scenario}


class TestLoadConfig:
    """設定ファイル読み込みのテスト"""

    def test_shipped_configs_load(self):
        """同梱の設定ファイルはすべて検証を通る"""
        for path in sorted(settings.config_dir.glob("*.yaml")):
            config = load_config(path)
            assert config is not None, f"読み込み失敗: {path}"
            print(f"✓ {path.name}")

    def test_s0_scenario(self):
        config = load_config(settings.config_dir / "study_s0.yaml")
        scenario = build_scenario(config)

        assert scenario.theta0.as_array().tolist() == [2.0, 0.5, 0.25]
        assert scenario.n_grid == (200, 500, 1000, 2000)
        assert scenario.replicates == 500
        assert scenario.outputs == frozenset({"mle", "posterior", "pseudo"})
        assert scenario.prior.a0 == 2.1
        assert scenario.seed == 20240601
        print(f"✓ S0 シナリオ: {scenario.name}")

    def test_periodic_scenario(self):
        config = load_config(settings.config_dir / "study_periodic.yaml")
        scenario = build_scenario(config)
        assert isinstance(scenario.design, PeriodicDesign)
        assert scenario.design.period == 16
        assert scenario.design.jitter_sd == 0.02

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.yaml")

    def test_broken_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("scenario: [unclosed\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_non_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text(yaml.safe_dump([1, 2, 3]), encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)


class TestValidation:
    """値の検証のテスト"""

    def test_unknown_key(self):
        """未知のキーはエラー"""
        raw = scenario_raw()
        raw["colour"] = "blue"
        with pytest.raises(ConfigError) as exc:
            parse_config(raw)
        assert "colour" in str(exc.value)
        print(f"✓ 未知のキー: {exc.value}")

    def test_zero_replicates(self):
        with pytest.raises(ConfigError):
            parse_config(scenario_raw(replicates=0))

    def test_n_grid_order(self):
        with pytest.raises(ConfigError):
            parse_config(scenario_raw(n_grid=[100, 50]))
        with pytest.raises(ConfigError):
            parse_config(scenario_raw(n_grid=[2, 50]))

    def test_window_alpha(self):
        raw = scenario_raw()
        raw["window"] = {"alpha": 0.5}
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_prior_positive(self):
        with pytest.raises(ConfigError):
            parse_config({"prior": {"b0": 0.0}})

    def test_domain_order(self):
        with pytest.raises(ConfigError):
            parse_config({"domain": {"u_lower": 1.0, "u_upper": 0.0}})

    def test_unidentifiable_theta(self):
        """u0 が定義域の外ならシナリオ構築時にエラー"""
        config = parse_config(scenario_raw(theta0={"gamma": 2.0, "u": 1.5, "sigma2": 0.25}))
        with pytest.raises(ConfigError):
            build_scenario(config)

    def test_missing_scenario(self):
        with pytest.raises(ConfigError):
            build_scenario(parse_config({}))


class TestBuilders:
    """設定からのオブジェクト構築のテスト"""

    def test_seed_precedence(self):
        """引数 > scenario.seed > 最上位 seed > 環境設定"""
        raw = scenario_raw(seed=11)
        raw["seed"] = 22
        config = parse_config(raw)
        assert build_scenario(config, seed=33).seed == 33
        assert build_scenario(config).seed == 11

        raw = scenario_raw()
        raw["seed"] = 22
        assert build_scenario(parse_config(raw)).seed == 22
        assert build_scenario(parse_config(scenario_raw())).seed == settings.seed
        print("✓ シードの優先順位")

    def test_defaults(self):
        config = parse_config({})
        prior = build_prior(config)
        assert (prior.m0, prior.k0, prior.a0, prior.b0) == (0.0, 0.01, 2.1, 0.1)
        window = build_window(config)
        assert window.kind == "power" and window.alpha == 0.25
        assert window.scale == settings.window_scale

    def test_tolerance_override(self):
        raw = scenario_raw(acceptance={"failure_rate_max": 0.1, "coverage": [0.9, 0.99]})
        tol = build_tolerances(parse_config(raw))
        assert tol.failure_rate_max == 0.1
        assert tuple(tol.coverage) == (0.9, 0.99)
        assert tol.frobenius == 0.20
