import numpy as np


def random_residual(dim, L, seed):
    """Dense matrix with spectral norm exactly ``L``."""
    rng = np.random.default_rng(seed)
    q1, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    q2, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    s = np.sort(rng.uniform(0, 1, dim))[::-1]
    s[0] = 1.0
    return L * (q1 * s) @ q2.T
