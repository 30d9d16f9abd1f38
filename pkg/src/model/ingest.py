"""
観測データCSVの読み込み

ヘッダー `t,x`、1行1観測、UTF-8、行順は任意
"""

import csv
import io
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from errors import DataFormatError
from model.types import Dataset, Domain

logger = logging.getLogger(__name__)

EXPECTED_HEADER = ["t", "x"]


def read_dataset_csv(path: Union[str, Path], domain: Optional[Domain] = None) -> Dataset:
    """
    CSVファイルから観測データを読み込む

    Args:
        path: CSVファイルのパス
        domain: 温度の定義域。省略時は観測温度の最小値・最大値を用いる

    Returns:
        Dataset: 温度昇順に並べ替えたデータセット

    Raises:
        DataFormatError: 文字コード不正・ヘッダー不正・数値変換失敗・列数不一致（行番号付き）
        FileNotFoundError: ファイルが存在しない場合
    """
    path = Path(path)
    t_values, x_values = [], []

    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line = raw[:e.start].count(b"\n") + 1
        raise DataFormatError(f"UTF-8 として読めないバイト列です (位置 {e.start})", line=line)

    with io.StringIO(text, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("空のファイルです", line=1)

        if [h.strip() for h in header] != EXPECTED_HEADER:
            raise DataFormatError(f"ヘッダーは 't,x' である必要があります: {header}", line=1)

        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise DataFormatError(f"列数が2ではありません: {row}", line=line_no)
            try:
                t_values.append(float(row[0]))
                x_values.append(float(row[1]))
            except ValueError:
                raise DataFormatError(f"数値に変換できません: {row}", line=line_no)

    if not t_values:
        raise DataFormatError("観測行がありません", line=2)

    t = np.array(t_values)
    x = np.array(x_values)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
        raise DataFormatError("有限でない値が含まれています")

    if domain is None:
        if t.min() == t.max():
            raise DataFormatError("定義域を推定できません（温度がすべて同一）")
        domain = Domain(float(t.min()), float(t.max()))

    logger.info(f"CSV読み込み完了: {path} ({t.size}観測)")
    return Dataset(t=t, x=x, domain=domain)
