"""Independent reference computations used to pin expected test values.

Everything here is deliberately written from first principles (dense closed
forms, finite differences, direct products) and never calls back into the
code paths under test.
"""

import numpy as np


def lmmse_rowwise(Y, pilots, noise_var, C):
    """Bayes-optimal linear estimate for rows iid CN(0, C), y = h P + n."""
    A = pilots.T
    gain = C @ A.conj().T @ np.linalg.inv(
        A @ C @ A.conj().T + noise_var * np.eye(A.shape[0])
    )
    return np.einsum("ts,...ns->...nt", gain, Y)


def gaussian_log_evidence(Y, pilots, noise_var, C):
    """Exact log p(Y | row covariance C) for y = h P + n, h ~ CN(0, C)."""
    A = pilots.T
    n_p = A.shape[0]
    S = A @ C @ A.conj().T + noise_var * np.eye(n_p)
    S_inv = np.linalg.inv(S)
    _, logdet = np.linalg.slogdet(S)
    quad = np.einsum("...na,ab,...nb->...", Y.conj(), S_inv, Y).real
    n_rows = Y.shape[-2]
    return -quad - n_rows * (logdet + n_p * np.log(np.pi))


def complex_gaussian_row_logpdf(X, cov):
    """Log-density of iid rows x ~ CN(0, cov), up to nothing (exact)."""
    inv = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    quad = np.einsum("...na,ab,...nb->...", X.conj(), inv, X).real
    return -quad - X.shape[-2] * (logdet + cov.shape[0] * np.log(np.pi))


def fd_conjugate_gradient(fn, X, step=1e-5):
    """Central-difference gradient of a real function in the conjugate convention.

    Returns ``g`` with ``dfn/dRe(X) = 2 Re(g)`` and ``dfn/dIm(X) = 2 Im(g)``,
    matching the score convention used across the package.
    """
    X = np.asarray(X, dtype=np.complex128)
    g = np.zeros_like(X)
    it = np.nditer(np.zeros(X.shape), flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        for part in (1.0, 1.0j):
            Xp = X.copy()
            Xp[idx] += step * part
            Xm = X.copy()
            Xm[idx] -= step * part
            deriv = (fn(Xp) - fn(Xm)) / (2.0 * step)
            g[idx] += 0.5 * deriv * part
    return g


def direct_alpha_bar(num_steps, beta_start, beta_end):
    """Cumulative products of (1 - beta_t) by plain repeated multiplication."""
    out = []
    acc = 1.0
    for i in range(num_steps):
        beta = beta_start + (beta_end - beta_start) * i / (num_steps - 1)
        acc *= 1.0 - beta
        out.append(acc)
    return out
