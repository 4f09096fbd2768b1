import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Tuple

import pandas as pd

from src.core.models import BoundFormula, LogBound
from src.core.utils.errors import BoundParameterError

LN2 = math.log(2.0)
LN32 = math.log(32.0)
LN200 = math.log(200.0)
LN800 = math.log(800.0)
LN1000 = math.log(1000.0)
LN1600 = math.log(1600.0)


def _require_count(name: str, value: Any, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise BoundParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def _require_ratio(name: str, value: float) -> float:
    if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 1.0:
        raise BoundParameterError(f"{name} must be a finite ratio >= 1, got {value!r}")
    return float(value)


def _bound(formula: BoundFormula, ln_value: float, **params) -> LogBound:
    return LogBound(formula, tuple(sorted(params.items())), ln_value)


def ln_window_bound(n: int, d: int) -> float:
    """Collisions of n balls in a unit window of a normalized log: (32 n^{3/2})^{5^d n - 2}"""
    _require_count("n", n, 1)
    _require_count("d", d, 2)
    return (5 ** d * n - 2) * (LN32 + 1.5 * math.log(n))


def ln_main_bound(n: int, d: int) -> float:
    """1600 (1000 * 32^{5^d})^n * n^{((3/2) 5^d + 9/2) n + 3/2}, summed term by term"""
    _require_count("n", n, 1)
    _require_count("d", d, 2)
    power = 5 ** d
    return LN1600 + n * (LN1000 + power * LN32) + ((1.5 * power + 4.5) * n + 1.5) * math.log(n)


def ln_bfk1_bound(n: int, mass_ratio: float = 1.0, radius_ratio: float = 1.0) -> float:
    """(32 sqrt(m_max/m_min) (r_max/r_min) n^{3/2})^{n^2}"""
    _require_count("n", n, 1)
    mass_ratio = _require_ratio("mass_ratio", mass_ratio)
    radius_ratio = _require_ratio("radius_ratio", radius_ratio)
    return n * n * (LN32 + 0.5 * math.log(mass_ratio) + math.log(radius_ratio) + 1.5 * math.log(n))


def ln_bfk5_bound(n: int, mass_ratio: float = 1.0) -> float:
    """(400 (m_max/m_min) n^2)^{2 n^4}"""
    _require_count("n", n, 1)
    mass_ratio = _require_ratio("mass_ratio", mass_ratio)
    return 2 * n ** 4 * (math.log(400.0) + math.log(mass_ratio) + 2.0 * math.log(n))


def ln_lower_bound(n: int) -> float:
    _require_count("n", n, 1)
    return (n // 2) * LN2


def ln_interval_bound(n_f: int, d: int, x_norm: float) -> float:
    """Collisions inside a family on [U1, U2]: 200 n_F^3 |x_F(t_*)| (32 n_F^{3/2})^{5^d n_F - 2}"""
    window = ln_window_bound(n_f, d)
    if not x_norm > 0.0:
        raise BoundParameterError(f"x_norm must be positive, got {x_norm!r}")
    return LN200 + 3.0 * math.log(n_f) + math.log(x_norm) + window


def ln_offspring_bound(n_f: int) -> float:
    """Offspring of one node: 1000 n_F^{9/2}"""
    _require_count("n_F", n_f, 1)
    return LN1000 + 4.5 * math.log(n_f)


def ln_tree_size_bound(n: int) -> float:
    """Nodes in the whole tree: 1000^n n^{9n/2}"""
    _require_count("n", n, 1)
    return n * LN1000 + 4.5 * n * math.log(n)


def ln_per_leaf_bound(n: int, d: int) -> float:
    """Open-interval collisions of any leaf: 800 n^{9/2} (32 n^{3/2})^{5^d n - 2}"""
    window = ln_window_bound(n, d)
    return LN800 + 4.5 * math.log(n) + window


def ln_open_interval_total(n: int, d: int) -> float:
    """All open-interval collisions: tree size times the per-leaf bound"""
    return ln_tree_size_bound(n) + ln_per_leaf_bound(n, d)


def ln_endpoint_total(n: int) -> float:
    """Collisions at interval endpoints: 1000^n n^{9n/2 + 1}"""
    return ln_tree_size_bound(n) + math.log(n)


def log_add(a: float, b: float) -> float:
    """ln(e^a + e^b) without overflow"""
    high, low = max(a, b), min(a, b)
    if math.isinf(low) and low < 0:
        return high
    return high + math.log1p(math.exp(low - high))


class BoundsService:
    def __init__(self):
        """Tabulates the closed-form collision bounds in natural-log space"""
        self.logger = logging.getLogger(__name__)

    def evaluate(self, formula: BoundFormula, **params) -> LogBound:
        """
        Evaluate one formula with its parameters recorded alongside the value

        Args:
            formula: Which bound to evaluate
            params: n, d, mass_ratio, radius_ratio, n_F or x_norm as the formula needs

        Returns:
            LogBound with provenance
        """
        formula = BoundFormula(formula)
        if formula == BoundFormula.MAIN_THM:
            value = ln_main_bound(params["n"], params["d"])
        elif formula == BoundFormula.BFK1:
            value = ln_bfk1_bound(params["n"], params.get("mass_ratio", 1.0), params.get("radius_ratio", 1.0))
        elif formula == BoundFormula.BFK5:
            value = ln_bfk5_bound(params["n"], params.get("mass_ratio", 1.0))
        elif formula == BoundFormula.LOWER:
            value = ln_lower_bound(params["n"])
        elif formula == BoundFormula.WINDOW:
            value = ln_window_bound(params["n"], params["d"])
        elif formula == BoundFormula.INTERVAL:
            value = ln_interval_bound(params["n_F"], params["d"], params["x_norm"])
        elif formula == BoundFormula.TREE_SIZE:
            value = ln_tree_size_bound(params["n"])
        elif formula == BoundFormula.OFFSPRING:
            value = ln_offspring_bound(params["n_F"])
        elif formula == BoundFormula.PER_LEAF:
            value = ln_per_leaf_bound(params["n"], params["d"])
        elif formula == BoundFormula.OPEN_INTERVAL_TOTAL:
            value = ln_open_interval_total(params["n"], params["d"])
        else:
            value = ln_endpoint_total(params["n"])
        return _bound(formula, value, **params)

    def tabulate(self, n_values: Iterable[int], d: int, mass_ratio: float = 1.0,
                 radius_ratio: float = 1.0) -> pd.DataFrame:
        """
        Every population-level formula for each n

        Returns:
            DataFrame with columns formula_id, n, d, params, ln_value, log10_value
        """
        rows: List[Dict[str, Any]] = []
        for n in n_values:
            bounds = [
                self.evaluate(BoundFormula.MAIN_THM, n=n, d=d),
                self.evaluate(BoundFormula.BFK1, n=n, mass_ratio=mass_ratio, radius_ratio=radius_ratio),
                self.evaluate(BoundFormula.BFK5, n=n, mass_ratio=mass_ratio),
                self.evaluate(BoundFormula.LOWER, n=n),
                self.evaluate(BoundFormula.WINDOW, n=n, d=d),
                self.evaluate(BoundFormula.TREE_SIZE, n=n),
                self.evaluate(BoundFormula.OFFSPRING, n_F=n),
                self.evaluate(BoundFormula.PER_LEAF, n=n, d=d),
                self.evaluate(BoundFormula.OPEN_INTERVAL_TOTAL, n=n, d=d),
                self.evaluate(BoundFormula.ENDPOINT_TOTAL, n=n),
            ]
            for bound in bounds:
                extra = {k: v for k, v in bound.params if k not in ("n", "n_F", "d")}
                rows.append({
                    "formula_id": bound.formula_id.value,
                    "n": n,
                    "d": d,
                    "params": ";".join(f"{k}={v}" for k, v in sorted(extra.items())),
                    "ln_value": bound.ln_value,
                    "log10_value": bound.log10_value,
                })
        self.logger.info(f"Tabulated {len(rows)} bound values for d={d}")
        return pd.DataFrame(rows, columns=["formula_id", "n", "d", "params", "ln_value", "log10_value"])

    def compare_bounds(self, n_values: Iterable[int], d: int) -> Tuple[pd.DataFrame, Dict[str, Optional[float]]]:
        """
        Ordering of lower bound, main bound and the earlier n^2-exponent bound

        Returns:
            Tuple of (table with n, ln_lower, ln_main, ln_bfk1, ordered, main_over_nlogn, bfk1_over_n2logn;
            summary with crossover n, c2 and c3)
        """
        n_values = sorted(set(int(n) for n in n_values))
        rows = []
        for n in n_values:
            lower, main, prior = ln_lower_bound(n), ln_main_bound(n, d), ln_bfk1_bound(n)
            n_log_n = n * math.log(n) if n > 1 else math.nan
            rows.append({
                "n": n,
                "ln_lower": lower,
                "ln_main": main,
                "ln_bfk1": prior,
                "ordered": lower < main < prior,
                "main_over_nlogn": main / n_log_n if n > 1 else math.nan,
                "bfk1_over_n2logn": prior / (n * n_log_n) if n > 1 else math.nan,
            })
        table = pd.DataFrame(rows)

        # smallest n from which the ordering holds for the rest of the scan
        crossover = None
        for n, ordered in zip(reversed(table["n"].tolist()), reversed(table["ordered"].tolist())):
            if not ordered:
                break
            crossover = n
        summary: Dict[str, Optional[float]] = {"crossover": crossover, "c2": None, "c3": None}
        fitted = table[table["n"] > 1]
        if not fitted.empty:
            summary["c2"] = float(fitted["main_over_nlogn"].max())
        if crossover is not None:
            beyond = table[(table["n"] >= crossover) & (table["n"] > 1)]
            if not beyond.empty:
                summary["c3"] = float(beyond["bfk1_over_n2logn"].min())
        self.logger.info(f"Bound ordering for d={d}: crossover at n={crossover}")
        return table, summary
