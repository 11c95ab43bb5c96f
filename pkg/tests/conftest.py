import numpy as np
import pytest

import cotap


@pytest.fixture(scope="session")
def chain():
    return cotap.load_chain_file(cotap.data_path("h1_upper.toml"))


@pytest.fixture(scope="session")
def base():
    return cotap.BasePose.identity()


L_POSE = np.array([0.0, 0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.0, np.pi / 2])


def random_spd(rng, dim, log_eig_range=(-2.0, 2.0)):
    """Random SPD matrix with eigenvalues exp(U(log_eig_range))."""
    A = rng.standard_normal((dim, dim))
    Q, _ = np.linalg.qr(A)
    eigs = np.exp(rng.uniform(*log_eig_range, size=dim))
    M = (Q * eigs) @ Q.T
    return 0.5 * (M + M.T)


def random_config(rng, chain, margin=0.1):
    """Random joint configuration strictly inside the limits."""
    lo, hi = chain.limits_array()
    span = hi - lo
    return rng.uniform(lo + margin * span, hi - margin * span)
