import numpy as np
import pytest
from scipy import stats

from subunmix.coherence import SubspaceCollection
from subunmix.linalg import haar_stiefel_batch, orthonormalize

ACCEPTANCE_LINES: list[str] = []


def orthogonal_stack(N, D, d):
    """N subspaces spanned by disjoint blocks of coordinate vectors (needs N*d <= D)."""
    assert N * d <= D
    stack = np.zeros((N, D, d))
    for i in range(N):
        stack[i, i * d : (i + 1) * d, :] = np.eye(d)
    return stack


def haar_collection(N, D, d, seed):
    return SubspaceCollection(haar_stiefel_batch(N, D, d, np.random.default_rng(seed)))


def near_orthogonal_collection(N, D, d, seed, eps=1e-4):
    """Rotated coordinate blocks with a small random perturbation (needs N*d <= D)."""
    rng = np.random.default_rng(seed)
    Q = stats.ortho_group.rvs(D, random_state=seed)
    stack = [
        np.asarray(orthonormalize(Q @ (B + eps * rng.standard_normal(B.shape))))
        for B in orthogonal_stack(N, D, d)
    ]
    return SubspaceCollection(np.stack(stack))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def orthogonal_collection():
    return SubspaceCollection(orthogonal_stack(4, 12, 3))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
