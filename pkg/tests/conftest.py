import pytest

from powvar import KernelSpec, TimeGrid, build_model, simulate_gaussian

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def fbm_ensembles():
    """fBm ensembles shared by the MC tests: step 2^-11, grid to T + 2^-4."""
    cache = {}

    def get(H, n_paths=2000, seed=11):
        key = (H, n_paths, seed)
        if key not in cache:
            grid = TimeGrid.from_step(1.0, 2.0**-4, 2.0**-11)
            model = build_model(KernelSpec.fbm(H))
            cache[key] = simulate_gaussian(model, grid, n_paths, seed)
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
