import numpy as np
import pytest

from times2d import _accel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    if request.param == "numba" and not _accel.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    prev = _accel.get_backend()
    _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(prev)


def param_fd_errors(store, loss_fn, names=None):
    """Max finite-difference relative error per parameter of ``store``.

    ``loss_fn()`` must rebuild the graph from the store on every call.
    """
    from times2d.autodiff import Tensor, finite_diff_check

    out = {}
    for name in names or list(store):
        original = store[name]

        def f(t, name=name):
            store._params[name] = t
            return loss_fn()

        try:
            out[name] = finite_diff_check(f, Tensor(original.data.copy()))
        finally:
            store._params[name] = original
    return out


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, line = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {line}")
