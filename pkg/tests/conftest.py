import numpy as np
import pytest

from cadc.dataset import InteractionDataset, split_leave_last_two
from cadc.synthetic import latent_factor_log

ACCEPTANCE_RESULTS: list[str] = []


def numeric_grad(loss_fn, arr: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = loss_fn()
        flat[k] = old - h
        down = loss_fn()
        flat[k] = old
        grad.reshape(-1)[k] = (up - down) / (2 * h)
    return grad


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture(scope="session")
def small_dataset() -> InteractionDataset:
    return latent_factor_log(n_users=60, n_items=40, per_user=8, seed=3)


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return split_leave_last_two(small_dataset)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
