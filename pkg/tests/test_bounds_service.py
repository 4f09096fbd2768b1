import math

import mpmath
import pytest

from src.core.models import BoundFormula
from src.core.services.bounds_service import (
    BoundsService,
    ln_bfk1_bound,
    ln_bfk5_bound,
    ln_endpoint_total,
    ln_interval_bound,
    ln_lower_bound,
    ln_main_bound,
    ln_offspring_bound,
    ln_tree_size_bound,
    ln_window_bound,
    log_add,
)
from src.core.utils.errors import BoundParameterError

mpmath.mp.dps = 60


def mp_ln_main(n, d):
    power = 5 ** d
    value = (mpmath.mpf(1600) * (1000 * mpmath.mpf(32) ** power) ** n
             * mpmath.mpf(n) ** (mpmath.mpf(3) / 2 * power * n + mpmath.mpf(9) / 2 * n + mpmath.mpf(3) / 2))
    return float(mpmath.log(value))


def mp_ln_bfk1(n):
    return float(mpmath.log((32 * mpmath.mpf(n) ** mpmath.mpf(1.5)) ** (n * n)))


class TestMainBound:
    @pytest.mark.parametrize("n,d", [(1, 2), (2, 2), (3, 2), (10, 2), (5, 3), (50, 3)])
    def test_matches_high_precision(self, n, d):
        assert ln_main_bound(n, d) == pytest.approx(mp_ln_main(n, d), rel=1e-12)

    def test_known_magnitude(self):
        bound = BoundsService().evaluate(BoundFormula.MAIN_THM, n=3, d=2)
        assert bound.log10_value == pytest.approx(185.92, abs=0.01)
        assert bound.param_dict == {"n": 3, "d": 2}

    def test_exact_integer_value(self):
        # exponent of n is 42 * 4 + 3/2, so n^exponent = 2^339 at n = 4
        exact = 1600 * (1000 * 32 ** 25) ** 4 * 2 ** 339
        assert ln_main_bound(4, 2) == pytest.approx(math.log(exact), rel=1e-13)

    def test_increasing_in_n(self):
        values = [ln_main_bound(n, 2) for n in range(1, 40)]
        assert all(a < b for a, b in zip(values, values[1:]))


class TestOtherFormulas:
    @pytest.mark.parametrize("n", [2, 3, 7, 20])
    def test_bfk1(self, n):
        assert ln_bfk1_bound(n) == pytest.approx(mp_ln_bfk1(n), rel=1e-12)

    def test_bfk1_ratios(self):
        assert ln_bfk1_bound(2, mass_ratio=4.0, radius_ratio=2.0) == pytest.approx(
            4 * math.log(32 * 2.0 * 2.0 * 2 ** 1.5))

    def test_bfk5(self):
        assert ln_bfk5_bound(2) == pytest.approx(32 * math.log(1600.0))

    def test_lower(self):
        assert ln_lower_bound(1) == 0.0
        assert ln_lower_bound(10) == pytest.approx(5 * math.log(2.0))
        assert ln_lower_bound(11) == pytest.approx(5 * math.log(2.0))

    def test_window(self):
        assert ln_window_bound(1, 2) == pytest.approx(23 * math.log(32.0))
        assert ln_window_bound(2, 3) == pytest.approx(248 * math.log(32 * 2 ** 1.5))

    def test_interval(self):
        expected = math.log(200.0) + 3 * math.log(3.0) + math.log(2.5) + ln_window_bound(3, 2)
        assert ln_interval_bound(3, 2, 2.5) == pytest.approx(expected)

    def test_offspring_and_tree_size(self):
        assert ln_offspring_bound(4) == pytest.approx(math.log(1000 * 4 ** 4.5))
        assert ln_tree_size_bound(3) == pytest.approx(math.log(1000 ** 3 * 3 ** 13.5))
        assert ln_endpoint_total(3) == pytest.approx(ln_tree_size_bound(3) + math.log(3.0))

    @pytest.mark.parametrize("call", [
        lambda: ln_main_bound(0, 2),
        lambda: ln_main_bound(3, 1),
        lambda: ln_main_bound(True, 2),
        lambda: ln_main_bound(2.0, 2),
        lambda: ln_bfk1_bound(3, mass_ratio=0.5),
        lambda: ln_bfk1_bound(3, radius_ratio=math.inf),
        lambda: ln_bfk5_bound(3, mass_ratio=math.nan),
        lambda: ln_interval_bound(3, 2, 0.0),
        lambda: ln_lower_bound(0),
    ])
    def test_parameter_errors(self, call):
        with pytest.raises(BoundParameterError):
            call()


class TestLogAdd:
    def test_sum(self):
        assert log_add(math.log(2.0), math.log(3.0)) == pytest.approx(math.log(5.0))

    def test_no_overflow(self):
        assert log_add(1000.0, 1000.0) == pytest.approx(1000.0 + math.log(2.0))

    def test_empty_term(self):
        assert log_add(1000.0, -math.inf) == 1000.0


class TestTables:
    def test_tabulate_shape(self):
        table = BoundsService().tabulate(range(2, 5), 2)
        assert list(table.columns) == ["formula_id", "n", "d", "params", "ln_value", "log10_value"]
        assert len(table) == 3 * 10
        lower = table[(table["formula_id"] == "lower") & (table["n"] == 4)]
        assert lower["ln_value"].iloc[0] == pytest.approx(2 * math.log(2.0))
        bfk1 = table[table["formula_id"] == "bfk1"]
        assert set(bfk1["params"]) == {"mass_ratio=1.0;radius_ratio=1.0"}

    def test_ordering_crossover_in_three_dimensions(self):
        table, summary = BoundsService().compare_bounds(range(2, 301), 3)
        assert 100 < summary["crossover"] < 200
        assert summary["c3"] > 0.0
        assert summary["c2"] > 0.0
        assert not table[table["n"] == 10]["ordered"].iloc[0]
        assert table[table["n"] == 300]["ordered"].iloc[0]

    def test_ordering_for_large_n(self):
        table, summary = BoundsService().compare_bounds([10 ** 6], 3)
        assert bool(table["ordered"].iloc[0])
        assert summary["crossover"] == 10 ** 6

    def test_lower_always_below_main(self):
        table, _ = BoundsService().compare_bounds(range(2, 50), 2)
        assert (table["ln_lower"] < table["ln_main"]).all()
