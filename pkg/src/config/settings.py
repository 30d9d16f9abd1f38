"""
設定管理モジュール

環境変数からの基本設定読み込み
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# プロジェクトルートディレクトリの特定
current_file = Path(__file__)
config_dir = current_file.parent  # src/config
src_dir = config_dir.parent       # src
PROJECT_ROOT = src_dir.parent     # プロジェクトルート

# .envファイルの読み込み
env_path = PROJECT_ROOT / ".env"
if env_path.exists():
    load_dotenv(env_path)


class Settings:
    """設定管理クラス"""

    def __init__(self):
        # 乱数・並列設定
        self.seed = int(os.getenv("HOCKEY_SEED", "20240601"))
        self.workers = int(os.getenv("HOCKEY_WORKERS", "1"))

        # ログ・出力設定
        self.log_level = os.getenv("HOCKEY_LOG_LEVEL", "INFO").upper()
        self.log_dir = PROJECT_ROOT / os.getenv("HOCKEY_LOG_DIR", "logs")
        self.output_dir = PROJECT_ROOT / os.getenv("HOCKEY_OUTPUT_DIR", "output")

        # 数値計算設定
        self.quad_epsabs = float(os.getenv("HOCKEY_QUAD_EPSABS", "1e-10"))
        self.grid_fine_nodes = int(os.getenv("HOCKEY_GRID_FINE_NODES", "2001"))
        self.grid_coarse_nodes = int(os.getenv("HOCKEY_GRID_COARSE_NODES", "512"))
        self.grid_half_width_sd = float(os.getenv("HOCKEY_GRID_HALF_WIDTH_SD", "10"))

        # 擬似問題の窓幅定数 (d_n の倍率)
        self.window_scale = float(os.getenv("HOCKEY_WINDOW_SCALE", "1.0"))

        # プロジェクト設定
        self.project_root = PROJECT_ROOT
        self.schema_dir = PROJECT_ROOT / "schemas"
        self.config_dir = PROJECT_ROOT / "configs"

        # テスト用設定
        self.test_data_dir = PROJECT_ROOT / "tests" / "test_data"


# モジュールレベルの設定インスタンス
settings = Settings()
