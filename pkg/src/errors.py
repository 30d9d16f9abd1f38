"""
例外定義モジュール

各パッケージ共通の例外階層
"""

from typing import Optional


class HockeyStickError(Exception):
    """本パッケージの例外基底クラス"""


class PreconditionError(HockeyStickError, ValueError):
    """操作の前提条件違反"""


class DataFormatError(PreconditionError):
    """入力CSVの形式エラー（行番号付き）"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{line}行目: {message}"
        super().__init__(message)


class NonDifferentiablePointError(PreconditionError):
    """屈折点 u が観測温度と一致し、尤度が微分不可能"""


class FlaggedFitError(PreconditionError):
    """退化フラグ付きの推定結果が渡された"""


class EmptyPseudoDatasetError(PreconditionError):
    """擬似問題で全観測が削除された"""


class InsufficientReplicatesError(PreconditionError):
    """診断に必要な反復数・標本サイズ数が不足"""


class SingularInformationError(HockeyStickError, ArithmeticError):
    """情報行列が特異（有効集合が空、またはコレスキー分解失敗）"""


class QuadratureError(HockeyStickError, ArithmeticError):
    """適応求積が許容誤差に収束しなかった"""

    def __init__(self, message: str, value: float = float("nan"), abserr: float = float("nan")):
        self.value = value
        self.abserr = abserr
        super().__init__(f"{message} (値: {value:.6g}, 達成誤差: {abserr:.3g})")


class GridCoverageError(HockeyStickError, ValueError):
    """u グリッドが事後分布の範囲を覆っていない"""


class StepSizeError(HockeyStickError, RuntimeError):
    """ランダムウォーク・メトロポリスの適応期間で受理ゼロ"""


class ConfigError(HockeyStickError, ValueError):
    """設定ファイルの不正（未知キー・範囲外の値）"""
