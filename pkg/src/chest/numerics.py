"""Complex-valued linear algebra, sampling primitives, and seeded RNG streams.

Conventions used throughout the package:

* Complex matrices are dense ``numpy.complex128`` arrays; the last two axes
  are the matrix, leading axes (if any) are batch dimensions.
* 1-D complex vectors ``x`` carry the covariance convention
  ``Cov(x) = E[x x^H]``, i.e. ``Cov[a, b] = E[x[a] * conj(x[b])]``.
* ``CN(0, 1)`` entries have independent real and imaginary parts with
  variance 1/2 each (unit variance per complex entry).
* Scores are gradients with respect to the conjugate variable: for a
  log-density ``L(x)``, ``score = dL/dconj(x)``.  The gradient in real
  coordinates is then ``dL/dRe(x) = 2*Re(score)`` and
  ``dL/dIm(x) = 2*Im(score)``; finite-difference tests rely on this mapping.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngStream",
    "sample_standard_complex_gaussian",
    "svd",
    "cholesky_sample",
    "to_real_channels",
    "to_complex",
    "ensure_complex_matrix",
    "ensure_all_finite",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A counter-based random stream identified by ``(seed, stream_id)``.

    Equal ``(seed, stream_id)`` pairs yield bit-identical draw sequences on
    every run and under any parallel schedule.  ``generator()`` builds a
    *fresh* generator each call, so consuming draws from one call never
    affects later calls; operations that need several independent draw
    sequences derive child streams with :meth:`derive`.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator keyed by ``(seed, stream_id)``."""
        key = np.array(
            [self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64
        )
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, *tags: int | str) -> "RngStream":
        """Child stream keyed by ``tags``, stable across runs and platforms.

        Tags are hashed together with the parent identity, so distinct tag
        tuples give disjoint streams (collision probability ~2^-64).
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(f"{self.seed & _MASK64}:{self.stream_id & _MASK64}".encode())
        for tag in tags:
            h.update(b"/")
            h.update(str(tag).encode())
        return RngStream(self.seed, int.from_bytes(h.digest(), "little"))


def complex_normal(gen: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Draw iid CN(0, 1) entries from a live generator (variance 1/2 per part)."""
    re = gen.standard_normal(shape)
    im = gen.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5)


def sample_standard_complex_gaussian(
    rows: int, cols: int, rng: RngStream
) -> np.ndarray:
    """Sample a ``rows x cols`` matrix with iid CN(0, 1) entries.

    Each entry has zero-mean real and imaginary parts of variance 1/2, so the
    per-entry complex variance is 1.  Repeated calls with an equal stream
    return bit-identical matrices.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dims must be >= 1, got ({rows}, {cols})")
    return complex_normal(rng.generator(), (rows, cols))


def svd(P: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``P = U @ diag(s) @ V.conj().T``.

    Returns ``(U, s, V)`` where ``U`` and ``V`` have orthonormal columns and
    ``s`` is nonnegative and nonincreasing.  Raises ``ValueError`` on a zero
    input and ``numpy.linalg.LinAlgError`` if the factorization does not
    converge; never returns silently invalid factors.
    """
    P = ensure_complex_matrix(P, "P")
    if not np.any(P):
        raise ValueError("svd: input matrix is identically zero")
    U, s, Vh = np.linalg.svd(P, full_matrices=False)
    return U, s, Vh.conj().T


def cholesky_sample(
    C: np.ndarray, rng: RngStream, size: int | None = None
) -> np.ndarray:
    """Draw ``h ~ CN(0, C)`` for Hermitian positive-semidefinite ``C``.

    Parameters
    ----------
    C : (n, n) array
        Covariance in the ``E[h h^H]`` convention.  May be singular.
    rng : RngStream
    size : int, optional
        When given, returns ``(size, n)`` iid draws sharing one factorization.

    Returns
    -------
    (n,) or (size, n) complex array.
    """
    F = psd_factor(C)
    gen = rng.generator()
    shape = (C.shape[0],) if size is None else (size, C.shape[0])
    z = complex_normal(gen, shape)
    return z @ F.T


def psd_factor(C: np.ndarray) -> np.ndarray:
    """Factor ``F`` with ``F @ F.conj().T == C`` via an eigendecomposition.

    Raises ``ValueError`` if ``C`` is not Hermitian or has an eigenvalue
    below ``-1e-10``.  Tiny negative eigenvalues from rounding are clipped.
    """
    C = np.asarray(C, dtype=np.complex128)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"covariance must be square, got shape {C.shape}")
    scale = max(1.0, float(np.abs(C).max()))
    if np.abs(C - C.conj().T).max() > 1e-10 * scale:
        raise ValueError("covariance is not Hermitian")
    w, Q = np.linalg.eigh(C)
    if w.min() < -1e-10:
        raise ValueError(
            f"covariance is not positive semidefinite (min eigenvalue {w.min():.3e})"
        )
    return Q * np.sqrt(np.clip(w, 0.0, None))


def to_real_channels(H: np.ndarray) -> np.ndarray:
    """Map complex ``(..., m, n)`` to stacked real/imag ``(..., 2, m, n)``."""
    H = np.asarray(H, dtype=np.complex128)
    return np.stack([H.real, H.imag], axis=-3)


def to_complex(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_real_channels`."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-3] != 2:
        raise ValueError(f"expected a 2-channel tensor, got shape {x.shape}")
    return x[..., 0, :, :] + 1j * x[..., 1, :, :]


def ensure_complex_matrix(
    x: np.ndarray, name: str = "matrix", shape: tuple[int, int] | None = None
) -> np.ndarray:
    """Validate and return ``x`` as a complex128 array with >= 2 dims."""
    a = np.asarray(x)
    if a.ndim < 2:
        raise ValueError(f"{name} must have at least 2 dimensions, got {a.ndim}")
    a = a.astype(np.complex128, copy=False)
    if shape is not None and a.shape[-2:] != tuple(shape):
        raise ValueError(f"{name} must have shape {shape}, got {a.shape[-2:]}")
    return a


def ensure_all_finite(x: np.ndarray, name: str = "array") -> np.ndarray:
    """Raise ``ValueError`` if ``x`` contains NaN or Inf entries."""
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x
