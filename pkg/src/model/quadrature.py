"""
極限デザインに対する適応求積

被積分関数は屈折点で滑らかでないため、屈折点で区間を分割して積分する。
"""

import logging
import warnings
from typing import Callable, Iterable, Optional

from scipy.integrate import IntegrationWarning, quad

from config.settings import settings
from errors import QuadratureError
from model.types import LimitDesign

logger = logging.getLogger(__name__)


def design_integral(
    func: Callable[[float], float],
    design: LimitDesign,
    upper: Optional[float] = None,
    breakpoints: Iterable[float] = (),
    epsabs: Optional[float] = None,
) -> float:
    """
    ∫_{u_lower}^{upper} func(t) f(t) dt を計算する

    Args:
        func: 被積分関数（密度を掛ける前）
        design: 極限デザイン
        upper: 積分上端。省略時は定義域上端
        breakpoints: 分割点（屈折点など）
        epsabs: 絶対許容誤差。省略時は settings.quad_epsabs

    Returns:
        float: 積分値

    Raises:
        QuadratureError: 求積が収束しなかった場合
    """
    lower = design.domain.u_lower
    upper = design.domain.u_upper if upper is None else min(upper, design.domain.u_upper)
    epsabs = settings.quad_epsabs if epsabs is None else epsabs

    if upper <= lower:
        return 0.0

    # 開区間内部の分割点のみ渡す
    cuts = sorted({float(p) for p in breakpoints if lower < p < upper})
    edges = [lower] + cuts + [upper]

    pdf = design.pdf
    total = 0.0
    total_err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", IntegrationWarning)
            value, abserr = quad(lambda s: func(s) * float(pdf(s)), a, b,
                                 epsabs=epsabs, epsrel=1e-12, limit=200)
        total += value
        total_err += abserr
        if caught:
            raise QuadratureError(f"求積が収束しませんでした [{a:.6g}, {b:.6g}]: {caught[0].message}",
                                  value=total, abserr=total_err)

    logger.debug(f"求積完了: [{lower:.6g}, {upper:.6g}] 分割 {cuts} 値 {total:.12g} 誤差 {total_err:.3g}")
    return total
