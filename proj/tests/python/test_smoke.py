import math
import os
from pathlib import Path

import numpy as np
import pytest

import invasion

CONFIG_DIR = Path(os.environ.get("INVASION_CONFIG_DIR", Path(__file__).parents[2] / "configs"))
DATA_DIR = Path(__file__).parents[1] / "data"


def test_months_round_trip():
    m = invasion.parse_month("2008-03")
    assert m == (2008 - 1970) * 12 + 2
    assert invasion.format_month(m) == "2008-03"
    with pytest.raises(invasion.ParseError):
        invasion.parse_month("2008-13")


def test_grid_and_homogenize():
    g = invasion.GridSpec.build(invasion.Extent(0, 0, 40, 40), 10, 20)
    assert (g.fine_rows, g.fine_cols, g.ratio) == (4, 4, 2)
    assert g.center(g.locate(15, 5)) == (15.0, 5.0)
    mu = [1.0, 4.0, 1.0, 4.0] * 4
    mu_bar, lambda_bar = invasion.homogenize(mu, [0.0] * 16, g)
    assert mu_bar == pytest.approx([1.6] * 4)
    assert lambda_bar == pytest.approx([0.0] * 4)


def test_solve_conserves_mass():
    g = invasion.GridSpec.build(invasion.Extent(0, 0, 400, 400), 10, 40)
    times, frames = invasion.solve(g, [10.0] * 1600, [0.0] * 1600, 200, 200, 0.0, 100.0, 3.0)
    assert times == [0.0, 1.0, 2.0, 3.0]
    for f in frames:
        assert invasion.integrate(f, g) == pytest.approx(100.0, rel=1e-8)
    assert min(min(f) for f in frames) >= 0.0


def test_link_and_errors():
    assert invasion.infection_probability(1.0, 0.0) == 0.5
    assert invasion.infection_probability(math.e, 0.0) == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))))
    with pytest.raises(invasion.DomainError):
        invasion.infection_probability(-1.0, 0.0)


def test_update_beta_centres_on_truth():
    rng = np.random.default_rng(1)
    n = 2000
    p = 0.5 * (1 + math.erf(0.8 / math.sqrt(2)))
    y = (rng.random(n) < p).astype(int).tolist()
    draws = np.array(invasion.update_beta([0.0], [1.0] * n, [0] * n, y, 2.5, 3, 500))[100:, 0]
    assert abs(draws.mean() - 0.8) < 3 * draws.std()


def test_scoring_and_regions():
    assert invasion.misclassification_rate([1, 0, 1, 0], [1, 1, 1, 0]) == 0.25
    g = invasion.GridSpec.build(invasion.Extent(0, 0, 40, 40), 10, 20)
    m = [0.0] * 16
    m[5] = 1.0
    cells, level, area = invasion.hpd_region(m, g, 0.9)
    assert cells == [5] and level == 1.0 and area == 100.0


def test_logistic_intercept_only():
    x = np.ones((10, 1))
    y = np.array([1, 0] * 5, dtype=float)
    coef, deviance, converged = invasion.fit_logistic(x, y)
    assert converged
    assert abs(coef[0]) < 1e-10
    assert all(b <= a for a, b in zip(deviance, deviance[1:]))


def test_config_simulate_fit(tmp_path):
    assert invasion.validate_config(CONFIG_DIR / "setting_a.ini")
    with pytest.raises(invasion.ConfigurationError):
        invasion.validate_config(tmp_path / "absent.ini")
    setting = DATA_DIR / "tiny_setting.ini"
    n = invasion.simulate(setting, tmp_path / "data", seed=4)
    assert n == 120
    invasion.fit(setting, tmp_path / "fit", samples=tmp_path / "data" / "samples.csv", seed=2)
    pmf = (tmp_path / "fit" / "summaries" / "year_pmf.csv").read_text().splitlines()[1:]
    assert sum(float(line.split(",")[1]) for line in pmf) == pytest.approx(1.0, abs=1e-9)
    assert (tmp_path / "fit" / "report.txt").exists()
