import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stochastic(rng, n, m, sparsity=0.0):
    Z = rng.random((n, m))
    if sparsity:
        Z[rng.random((n, m)) < sparsity] = 0.0
        Z[np.arange(n), rng.integers(0, m, n)] += 0.1
    return Z / Z.sum(axis=1, keepdims=True)


def union_find_components(A, tol=0.0):
    """Connected components of the undirected support of A (entries > tol)."""
    m = A.shape[0]
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(m):
        for j in range(m):
            if i != j and (A[i, j] > tol or A[j, i] > tol):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    return len({find(i) for i in range(m)})


def project_simplex_bisection(v, iters=100):
    """Euclidean projection onto the probability simplex by bisection on the shift."""
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(v - mid, 0).sum() > 1:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0)


def simplex_qp_projected_gradient(target, steps=100, lr=0.5):
    """min_a 1/2 ||a - target||^2 on the simplex, by projected gradient descent.

    With step 0.5 the error contracts by half per step.
    """
    a = np.full(target.size, 1.0 / target.size)
    for _ in range(steps):
        a = project_simplex_bisection(a - lr * (a - target))
    return a


def power_iteration_radius(S, iters=500, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(S.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = S @ v
        lam = np.linalg.norm(w)
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    status = "PASS" if passed else "FAIL"
    line = f"criterion {number:>2} {status}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def record_skip(number, reason):
    line = f"criterion {number:>2} SKIP: {reason}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
