import numpy as np
import pytest
from scipy.special import expit

import efpmm
from efpmm import riccati
from efpmm.flow import fit_quadratic


@pytest.fixture(scope="session")
def gold():
    return efpmm.gold_params()


@pytest.fixture(scope="session")
def gold_quad(gold):
    return fit_quadratic(gold)


@pytest.fixture(scope="session")
def gold_va(gold, gold_quad):
    return riccati.solve(riccati.build_system(gold, gold_quad), gold.T)


def quote_grid_oracle(z, p, params, lo=-10.0, hi=40.0, step=1e-4):
    """Brute-force quote Hamiltonian: grid sup plus parabolic argmax refine.

    Independent of the production root-finder: enumerates the payoff on a
    dense offset grid and sharpens the argmax with a 3-point parabola fit
    (the grid itself limits the argmax to half a step otherwise).
    """
    gz = params.gamma * z
    d = np.arange(lo, hi, step)
    vals = expit(-(params.alpha + params.beta * d)) * -np.expm1(-gz * (d - p)) / gz
    i = int(vals.argmax())
    h_val = float(vals[i])
    if 0 < i < len(d) - 1:
        denom = vals[i - 1] - 2.0 * vals[i] + vals[i + 1]
        shift = 0.5 * (vals[i - 1] - vals[i + 1]) / denom if denom != 0 else 0.0
        arg = float(d[i] + shift * step)
    else:
        arg = float(d[i])
    return h_val, arg
