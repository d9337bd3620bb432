import numpy as np
import pytest

from evfact import kernels


def test_both_implementation_sets_registered():
    assert "numpy" in kernels.IMPLEMENTATIONS
    if kernels.NUMBA_ENABLED:
        assert "numba" in kernels.IMPLEMENTATIONS


@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba path disabled")
@pytest.mark.parametrize("name", ["sigmoid", "relu"])
def test_unary_paths_agree(name):
    rng = np.random.default_rng(3)
    x = rng.normal(0, 5, 1000)
    np_out = kernels.IMPLEMENTATIONS["numpy"][name](x)
    nb_out = kernels.IMPLEMENTATIONS["numba"][name](x)
    np.testing.assert_allclose(np_out, nb_out, rtol=1e-15, atol=0)


@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba path disabled")
@pytest.mark.parametrize("name", ["sigmoid_grad", "tanh_grad", "relu_grad"])
def test_grad_paths_agree(name):
    rng = np.random.default_rng(4)
    g = rng.normal(0, 1, 1000)
    saved = rng.uniform(-0.99, 0.99, 1000)
    np_out = kernels.IMPLEMENTATIONS["numpy"][name](g, saved)
    nb_out = kernels.IMPLEMENTATIONS["numba"][name](g, saved)
    np.testing.assert_allclose(np_out, nb_out, rtol=1e-15, atol=0)


@pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba path disabled")
def test_adam_paths_agree():
    rng = np.random.default_rng(5)
    param_np = rng.normal(0, 1, 200)
    m_np, v_np = np.zeros(200), np.zeros(200)
    param_nb, m_nb, v_nb = param_np.copy(), m_np.copy(), v_np.copy()
    for t in range(1, 6):
        grad = rng.normal(0, 1, 200)
        kernels.IMPLEMENTATIONS["numpy"]["adam_update"](
            param_np, grad, m_np, v_np, t, 1e-3, 0.9, 0.999, 1e-8
        )
        kernels.IMPLEMENTATIONS["numba"]["adam_update"](
            param_nb, grad, m_nb, v_nb, t, 1e-3, 0.9, 0.999, 1e-8
        )
    assert np.all(np.isfinite(param_np))
    np.testing.assert_allclose(param_np, param_nb, rtol=1e-12)


def test_sigmoid_extreme_inputs_do_not_overflow():
    x = np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0])
    out = kernels.sigmoid(x)
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[-1] == 1.0
    assert out[2] == 0.5


def test_relu_subgradient_at_zero_is_zero():
    g = np.ones(3)
    x = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(kernels.relu_grad(g, x), [0.0, 0.0, 1.0])


def test_env_flag_forces_numpy_fallback():
    import subprocess
    import sys

    code = (
        "from evfact import kernels; "
        "assert not kernels.NUMBA_ENABLED; "
        "assert 'numba' not in kernels.IMPLEMENTATIONS; "
        "import numpy as np; "
        "print(kernels.sigmoid(np.zeros(1))[0])"
    )
    proc = subprocess.run(
        [sys.executable, "-c", code],
        env={"EVFACT_NUMBA": "0", "PATH": "/usr/bin:/bin"},
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == "0.5"
