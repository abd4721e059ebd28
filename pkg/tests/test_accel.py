import json
import os
import subprocess
import sys

import numpy as np
import pytest

from kernelforge import _accel

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")

THETAS = {
    "SE": [0.3, -0.4],
    "PER": [-0.2, 0.1, 0.7],
    "LIN": [-1.0, -0.5, 0.8],
    "RQ": [0.1, 0.5, -1.2],
}


@pytest.mark.parametrize("family", _accel.FAMILIES)
@pytest.mark.parametrize("symmetric", [False, True])
def test_block_backends_agree(family, symmetric, rng):
    code = _accel.FAMILY_CODE[family]
    x1 = rng.uniform(-3, 3, 23)
    x2 = x1 if symmetric else rng.uniform(-3, 3, 17)
    Kn, Gn = _accel.numpy_block(code, THETAS[family], x1, x2, True, symmetric)
    Kb, Gb = _accel.numba_block(code, THETAS[family], x1, x2, True, symmetric)
    np.testing.assert_allclose(Kb, Kn, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(Gb, Gn, rtol=1e-10, atol=1e-12)
    if symmetric:
        assert np.array_equal(Kb, Kb.T)


@pytest.mark.parametrize("family", _accel.FAMILIES)
def test_contract_backends_agree(family, rng):
    code = _accel.FAMILY_CODE[family]
    x = rng.uniform(-3, 3, 31)
    A = rng.normal(size=(31, 31))
    W = A + A.T
    gn = _accel.numpy_contract(code, THETAS[family], x, W)
    gb = _accel.numba_contract(code, THETAS[family], x, W)
    np.testing.assert_allclose(gb, gn, rtol=1e-10, atol=1e-10 * np.abs(gn).max())


_PROBE = """
import json
import numpy as np
from kernelforge import _accel, parse, GpModel, Dataset, log_marginal_likelihood
X = np.linspace(0, 5, 12)[:, None]
y = np.sin(X[:, 0])
v, g = log_marginal_likelihood(GpModel(parse("SE_1 * PER_1 + LIN_1 + RQ_1"), 0.1), Dataset(X, y))
print(json.dumps([_accel.backend(), v, list(g)]))
"""


def _probe(flag):
    env = dict(os.environ, KERNELFORGE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", _PROBE], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(out.stdout)


@pytest.mark.parametrize("flag, expected", [("0", "numpy"), ("off", "numpy"),
                                            ("false", "numpy"), ("1", "numba")])
def test_env_var_selects_backend(flag, expected):
    assert _probe(flag)[0] == expected


def test_backends_give_same_likelihood():
    _, v0, g0 = _probe("0")
    _, v1, g1 = _probe("1")
    assert v1 == pytest.approx(v0, rel=1e-12)
    np.testing.assert_allclose(g1, g0, rtol=1e-9, atol=1e-12)
