import numpy as np
import pytest

# one line per acceptance criterion, printed after the run
_CRITERIA: dict = {}


def record_criterion(number: int, ok: bool, detail: str, seconds: float) -> None:
    _CRITERIA[number] = (ok, detail, seconds)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail, seconds = _CRITERIA[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if ok else 'FAIL'} ({seconds:.1f} s) {detail}")


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Load (or compile) the numba kernels once so timings measure work, not JIT."""
    from estrogen_ocp import kernels
    from estrogen_ocp.integrate import integrate
    from estrogen_ocp.model import DietInit, ModelParams, simulate_basic, simulate_extended

    prm = ModelParams()
    simulate_basic(prm, DietInit.default("CD"), 1.0)
    simulate_extended(prm, DietInit.default("CD").extended(), (0.0, 1.0), 0.5)
    grid = np.linspace(0.0, 1.0, 5)
    y0 = np.repeat(DietInit.default("CD").extended()[:, None], 2, axis=1)
    integrate(kernels.BATCH_KERNEL, y0, (0.0, 1.0), output_grid=grid,
              args=kernels.make_args(kernels.pack(prm), grid, G1=np.zeros((2, 5))))
    X = np.repeat(DietInit.default("CD").extended()[None, :], 5, axis=0)
    integrate(kernels.ADJOINT_KERNEL, np.zeros(4), (1.0, 0.0), output_grid=grid,
              args=kernels.make_args(kernels.pack(prm), grid, np.zeros(5), np.ones(2),
                                     X, np.zeros_like(X)))
