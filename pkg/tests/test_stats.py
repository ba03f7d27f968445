import numpy as np

from pytest import approx, raises
from scipy.stats import t
from statsmodels.regression.linear_model import OLS
from statsmodels.stats.diagnostic import het_breuschpagan

from cloudcast.errors import DataError, DegenerateTestError
from cloudcast.evaluation import breusch_pagan, diebold_mariano, pearson


def hac_dm(e1, e2, h):
    """Diebold-Mariano statistic from statsmodels' Newey-West t-value."""
    d = np.asarray(e1) ** 2 - np.asarray(e2) ** 2
    n = len(d)
    fit = OLS(d, np.ones(n)).fit(
        cov_type='HAC', cov_kwds=dict(maxlags=h - 1, use_correction=False))
    return fit.tvalues[0] * np.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)


def test_dm_hand_values():
    # absolute losses 1..10 against zero errors: mean 5.5, sum of
    # squared deviations 82.5, lag-one cross products 57.75
    errors = np.arange(1.0, 11.0)
    stat, p_value = diebold_mariano(errors, np.zeros(10), 'absolute')
    assert stat == approx(np.sqrt(33.0), abs=1e-6)
    assert p_value == approx(2 * t.sf(np.sqrt(33.0), 9), abs=1e-6)
    stat, _ = diebold_mariano(errors, np.zeros(10), 'absolute', horizon=2)
    assert stat == approx(np.sqrt(2904.0 / 187.0), abs=1e-6)


def test_dm_negative_autocorrelation():
    # losses alternate 1, 3: lag-one autocovariance -0.9 against a
    # variance of 1, so unweighted lags would go negative
    errors = np.tile([1.0, 3.0], 5)
    stat, p_value = diebold_mariano(errors, np.zeros(10), 'absolute',
                                    horizon=2)
    assert stat == approx(np.sqrt(288.0), abs=1e-6)
    assert p_value < 1e-6

    rng = np.random.default_rng(9)
    base = rng.normal(0, 0.1, 100)
    e1 = np.sqrt(1.5 + np.tile([1.0, -1.0], 50) + base ** 2)
    stat, p_value = diebold_mariano(e1, np.ones(100), horizon=2)
    assert np.isfinite(stat)
    assert 0 <= p_value <= 1


def test_dm_matches_newey_west():
    rng = np.random.default_rng(3)
    e1 = rng.normal(0, 1.2, 200)
    e2 = rng.normal(0, 1.0, 200)
    e1[1:] += 0.6 * e1[:-1]
    for h in (1, 2, 4):
        stat, p_value = diebold_mariano(e1, e2, horizon=h)
        expected = hac_dm(e1, e2, h)
        assert stat == approx(expected, abs=1e-6)
        assert p_value == approx(2 * t.sf(abs(expected), 199), abs=1e-6)


def test_dm_antisymmetry():
    rng = np.random.default_rng(4)
    e1, e2 = rng.normal(size=(2, 60))
    for loss in ('squared', 'absolute'):
        stat, p_value = diebold_mariano(e1, e2, loss)
        swapped, swapped_p = diebold_mariano(e2, e1, loss)
        assert swapped == approx(-stat)
        assert swapped_p == approx(p_value)


def test_dm_detects_worse_forecast():
    rng = np.random.default_rng(5)
    good = rng.normal(0, 0.5, 500)
    bad = good + rng.normal(0, 1.0, 500)
    stat, p_value = diebold_mariano(bad, good)
    assert stat > 0
    assert p_value < 0.01


def test_dm_errors():
    with raises(DegenerateTestError):
        diebold_mariano(np.ones(20), -np.ones(20))
    with raises(DataError, match='at least 10'):
        diebold_mariano(np.ones(9), np.zeros(9))
    with raises(DataError, match='unknown loss'):
        diebold_mariano(np.arange(20.0), np.zeros(20), loss='huber')
    with raises(DataError, match='horizon'):
        diebold_mariano(np.arange(20.0), np.zeros(20), horizon=0)


def test_breusch_pagan_matches_statsmodels():
    rng = np.random.default_rng(6)
    x = rng.uniform(0.5, 2.0, (300, 2))
    residuals = rng.normal(0, x[:, 0])
    lm, p_value = breusch_pagan(residuals, x)
    exog = np.column_stack([np.ones(300), x])
    expected_lm, expected_p, _, _ = het_breuschpagan(residuals, exog)
    assert lm == approx(expected_lm, rel=1e-8)
    assert p_value == approx(expected_p, rel=1e-6)
    assert p_value < 0.05


def test_breusch_pagan_homoscedastic():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, 500)
    lm, p_value = breusch_pagan(rng.normal(size=500), x)
    assert p_value > 0.01
    assert breusch_pagan(np.ones(10), np.arange(10.0)) == (0.0, 1.0)


def test_breusch_pagan_errors():
    with raises(DataError, match='rank-deficient'):
        breusch_pagan(np.arange(10.0), np.ones(10))
    with raises(DataError, match='regressor rows'):
        breusch_pagan(np.arange(10.0), np.arange(9.0))


def test_pearson():
    rng = np.random.default_rng(8)
    x, y = rng.normal(size=(2, 100))
    r = pearson(x, y)
    assert r == approx(np.corrcoef(x, y)[0, 1])
    assert pearson(3 * x + 1, 2 * y - 5) == approx(r)
    assert pearson(x, -x) == approx(-1.0)
    with raises(DataError, match='zero variance'):
        pearson(x, np.ones(100))
    with raises(DataError):
        pearson([1.0], [2.0])
