"""Hot-kernel correctness: compiled extension vs pure-numpy fallback vs a
naive loop oracle."""

import numpy as np
import pytest

from lesionbench.kernels import fallback
from tests.conftest import naive_conv2d

try:
    from lesionbench.kernels import _convcore as compiled
    BACKENDS = [("fallback", fallback), ("compiled", compiled)]
except ImportError:  # pragma: no cover - extension always built in CI
    compiled = None
    BACKENDS = [("fallback", fallback)]


def _rand_conv_case(rng, stride):
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    h = int(rng.integers(k, k + 6))
    w = int(rng.integers(k, k + 6))
    x = rng.standard_normal((cin, h, w))
    kern = rng.standard_normal((cout, cin, k, k))
    b = rng.standard_normal(cout)
    return x, kern, b


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_conv_forward_matches_naive_loop(name, mod):
    rng = np.random.default_rng(7)
    for trial in range(25):
        stride = int(rng.integers(1, 3))
        x, kern, b = _rand_conv_case(rng, stride)
        got = np.asarray(mod.conv2d_forward(x, kern, b, stride))
        want = naive_conv2d(x, kern, b, stride=stride)
        assert got.shape == want.shape
        assert np.allclose(got, want, atol=1e-12), f"trial {trial} stride {stride}"


def test_backends_agree_on_conv_forward():
    if compiled is None:
        pytest.skip("compiled extension unavailable")
    rng = np.random.default_rng(3)
    for _ in range(20):
        stride = int(rng.integers(1, 3))
        x, kern, b = _rand_conv_case(rng, stride)
        a = np.asarray(compiled.conv2d_forward(x, kern, b, stride))
        f = np.asarray(fallback.conv2d_forward(x, kern, b, stride))
        assert np.allclose(a, f, atol=1e-12)


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_conv_backward_input_is_forward_adjoint(name, mod):
    # <conv(x), g> must equal <x, conv_backward_input(g)> for all g (adjoint identity)
    rng = np.random.default_rng(11)
    for _ in range(15):
        stride = int(rng.integers(1, 3))
        x, kern, _ = _rand_conv_case(rng, stride)
        zero_bias = np.zeros(kern.shape[0])
        out = np.asarray(mod.conv2d_forward(x, kern, zero_bias, stride))
        g = rng.standard_normal(out.shape)
        dx = np.asarray(mod.conv2d_backward_input(g, kern, stride, x.shape[1], x.shape[2]))
        assert dx.shape == x.shape
        lhs = float((out * g).sum())
        rhs = float((x * dx).sum())
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_conv_backward_kernel_is_forward_adjoint(name, mod):
    rng = np.random.default_rng(13)
    for _ in range(15):
        stride = int(rng.integers(1, 3))
        x, kern, b = _rand_conv_case(rng, stride)
        out = np.asarray(mod.conv2d_forward(x, kern, b, stride))
        g = rng.standard_normal(out.shape)
        dw, db = mod.conv2d_backward_kernel(g, x, kern.shape[2], stride)
        dw = np.asarray(dw)
        db = np.asarray(db)
        # directional check: d/deps <conv(x; kern + eps*E), g> == <E, dw>
        lhs = float((out * g).sum())
        rhs = float((kern * dw).sum()) + float(b @ db)
        # conv is linear in (kern, bias) jointly, so the inner products agree
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))
        assert np.allclose(db, g.sum(axis=(1, 2)), atol=1e-12)


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_maxpool_forward_values_and_argmax(name, mod):
    rng = np.random.default_rng(17)
    for _ in range(15):
        c = int(rng.integers(1, 4))
        win = int(rng.integers(1, 4))
        h = win * int(rng.integers(1, 5))
        w = win * int(rng.integers(1, 5))
        x = rng.standard_normal((c, h, w))
        out, idx = mod.maxpool_forward(x, win)
        out = np.asarray(out)
        idx = np.asarray(idx)
        for ch in range(c):
            for i in range(h // win):
                for j in range(w // win):
                    block = x[ch, i * win:(i + 1) * win, j * win:(j + 1) * win]
                    assert out[ch, i, j] == block.max()
                    r, cidx = divmod(int(idx[ch, i, j]), w)
                    assert x[ch, r, cidx] == block.max()


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_maxpool_tie_breaks_to_first_row_major(name, mod):
    # a window of identical values must select its top-left element
    x = np.zeros((1, 4, 4))
    x[0, 2:, 2:] = 5.0  # bottom-right window all equal
    out, idx = mod.maxpool_forward(x, 2)
    assert np.asarray(out)[0, 1, 1] == 5.0
    assert int(np.asarray(idx)[0, 1, 1]) == 2 * 4 + 2
    assert int(np.asarray(idx)[0, 0, 0]) == 0


def test_backends_agree_on_maxpool_ties():
    if compiled is None:
        pytest.skip("compiled extension unavailable")
    rng = np.random.default_rng(23)
    for _ in range(10):
        # heavy ties: integer-quantized values
        x = rng.integers(0, 3, size=(2, 6, 6)).astype(np.float64)
        oc, ic = compiled.maxpool_forward(x, 2)
        of, iff = fallback.maxpool_forward(x, 2)
        assert np.array_equal(np.asarray(oc), np.asarray(of))
        assert np.array_equal(np.asarray(ic), np.asarray(iff))


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_maxpool_backward_scatters_to_argmax(name, mod):
    rng = np.random.default_rng(29)
    x = rng.standard_normal((2, 6, 6))
    out, idx = mod.maxpool_forward(x, 3)
    g = rng.standard_normal(np.asarray(out).shape)
    dx = np.asarray(mod.maxpool_backward(g, np.asarray(idx), 6, 6))
    assert dx.shape == x.shape
    # every gradient entry lands on exactly one input cell per window
    assert np.isclose(dx.sum(), g.sum())
    for ch in range(2):
        for i in range(2):
            for j in range(2):
                r, c = divmod(int(np.asarray(idx)[ch, i, j]), 6)
                assert dx[ch, r, c] == g[ch, i, j]


def test_backend_selection_env(tmp_path):
    import os
    import subprocess
    import sys
    code = "import lesionbench.kernels as k; print(k.backend_name())"
    for mode, expected in (("fallback", "fallback"), ("auto", None)):
        env = dict(os.environ, LESIONBENCH_BACKEND=mode)
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
        if expected:
            assert out.stdout.strip() == expected
        else:
            assert out.stdout.strip() in ("compiled", "fallback")


def test_unknown_backend_env_rejected():
    import os
    import subprocess
    import sys
    env = dict(os.environ, LESIONBENCH_BACKEND="gpu")
    out = subprocess.run([sys.executable, "-c", "import lesionbench.kernels"],
                         env=env, capture_output=True, text=True)
    assert out.returncode != 0
