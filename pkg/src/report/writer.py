"""
結果ファイルの書き出し

JSON・CSV はいずれも同じディレクトリの一時ファイルへ書いてから os.replace で置き換える。
中断されても途中までのファイルが結果として残ることはない。
"""

import csv
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def to_jsonable(value: Any) -> Any:
    """numpy 型を組み込み型へ、非有限の浮動小数点数を None へ変換する"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _atomic_target(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _replace_from_temp(path: Path, write) -> None:
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            write(f)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def write_json_atomic(path: PathLike, payload: Any) -> Path:
    """
    JSON をアトミックに書き出す

    Returns:
        Path: 書き出したファイルのパス
    """
    path = _atomic_target(path)
    data = to_jsonable(payload)
    _replace_from_temp(path, lambda f: json.dump(data, f, ensure_ascii=False, indent=2, allow_nan=False))
    logger.info(f"JSON 書き出し完了: {path}")
    return path


def write_csv_atomic(path: PathLike, header: List[str], rows: Iterable[List[Any]]) -> Path:
    """ヘッダー付き CSV をアトミックに書き出す"""
    path = _atomic_target(path)

    def _write(f):
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in to_jsonable(list(row))])

    _replace_from_temp(path, _write)
    logger.info(f"CSV 書き出し完了: {path}")
    return path


def get_record_header_row() -> List[str]:
    """反復ごとの記録 CSV のヘッダー行"""
    return [
        "n", "rep_id",
        "gamma_hat", "u_hat", "sigma2_hat", "error_norm", "flags",
        "covered_gamma", "covered_u", "covered_sigma2",
        "sigma2_bias", "sigma2_cross", "sigma2_noise", "sup_nu",
        "gamma_bayes", "u_bayes", "sigma2_bayes", "bvm_l1_u", "bayes_gap", "posterior_mass",
        "gamma_pseudo", "u_pseudo", "sigma2_pseudo", "pseudo_flags", "pseudo_gap", "deleted_fraction",
        "bvm_l1_u_pseudo",
    ]


def _theta_cells(theta) -> List[Optional[float]]:
    if theta is None:
        return [None, None, None]
    return [theta.gamma, theta.u, theta.sigma2]


def convert_record_to_row(record) -> List[Any]:
    """
    ReplicateRecord を CSV の1行に変換する。get_record_header_row() の順序と一致させる
    """
    covered = list(record.covered) if record.covered is not None else [None, None, None]
    terms = record.sigma2_terms or {}
    return [
        record.n, record.rep_id,
        *_theta_cells(record.theta_hat), record.error_norm, ";".join(record.flags),
        *covered,
        terms.get("bias"), terms.get("cross"), terms.get("noise"), record.sup_nu,
        *_theta_cells(record.theta_bayes), record.bvm_l1_u, record.bayes_gap, record.posterior_mass,
        *_theta_cells(record.theta_hat_pseudo), ";".join(record.pseudo_flags), record.pseudo_gap,
        record.deleted_fraction,
        record.bvm_l1_u_pseudo,
    ]


def get_grid_header_row() -> List[str]:
    return ["u", "log_weight", "weight"]


def convert_grid_to_rows(grid) -> List[List[float]]:
    return [[u, lw, w] for u, lw, w in zip(grid.u_nodes, grid.log_weights, grid.normalized)]


def get_draws_header_row() -> List[str]:
    return ["gamma", "u", "sigma2"]


def write_study_report(report, json_path: PathLike, csv_path: Optional[PathLike] = None,
                       extra: Optional[dict] = None) -> Path:
    """
    StudyReport を JSON（と任意で反復ごとの CSV）に書き出す

    Args:
        report: StudyReport
        json_path: JSON の出力先
        csv_path: 反復ごとの記録 CSV の出力先（None なら書かない）
        extra: JSON の最上位に追加するキー（診断結果など）
    """
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    if csv_path is not None:
        write_csv_atomic(csv_path, get_record_header_row(),
                         (convert_record_to_row(r) for r in report.records))
    return write_json_atomic(json_path, payload)
