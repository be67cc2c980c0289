"""Synthetic multi-environment MIMO channel data, pilots, measurements, and NMSE.

Four channel families stand in for distinct propagation environments:

* ``correlated-gaussian`` — rows iid CN(0, C) with exponential transmit
  correlation ``C[i, j] = r^|i-j|``.
* ``clustered-multipath`` — sum of per-ray steering outer products grouped
  into clusters, optionally with a Rician line-of-sight component.
* ``sparse-angular`` — a small number of active transmit-angle columns in
  the 2-D DFT (angular) domain.
* ``analytic-gaussian`` — rows iid CN(0, C) with an explicit row covariance,
  used as an exactly known reference distribution.

Datasets are globally rescaled after generation so the empirical mean
per-entry power is exactly 1 (a population-level normalization: per-sample
power variation is preserved).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .numerics import (
    RngStream,
    complex_normal,
    ensure_complex_matrix,
    psd_factor,
    svd,
)

__all__ = [
    "CHANNEL_KINDS",
    "ChannelModelSpec",
    "Dataset",
    "MeasurementSetup",
    "exponential_correlation",
    "dft_matrix",
    "angular_transform",
    "generate_dataset",
    "make_pilots",
    "simulate_measurement",
    "snr_to_noise_var",
    "nmse",
    "nmse_db",
    "save_dataset",
    "load_dataset",
]

CHANNEL_KINDS = (
    "correlated-gaussian",
    "clustered-multipath",
    "sparse-angular",
    "analytic-gaussian",
)


@dataclass(frozen=True, eq=False)
class ChannelModelSpec:
    """Parameters of one channel environment.

    Only the fields relevant to ``kind`` may be set; :meth:`validate` rejects
    anything inconsistent.
    """

    kind: str
    nr: int
    nt: int
    r: float | None = None  # correlated-gaussian: transmit correlation in [0, 1)
    clusters: int | None = None  # clustered-multipath
    rays_per_cluster: int | None = None
    angle_spread: float | None = None  # radians, per-cluster ray spread
    los_factor: float | None = None  # Rician LOS power ratio, >= 0
    active_taps: int | None = None  # sparse-angular
    covariance: np.ndarray | None = None  # analytic-gaussian row covariance

    def validate(self) -> "ChannelModelSpec":
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.nr < 1 or self.nt < 1:
            raise ValueError(f"antenna counts must be >= 1, got ({self.nr}, {self.nt})")
        if self.kind == "correlated-gaussian":
            if self.r is None or not 0.0 <= self.r < 1.0:
                raise ValueError(f"correlation r must lie in [0, 1), got {self.r}")
        elif self.kind == "clustered-multipath":
            if not self.clusters or self.clusters < 1:
                raise ValueError("clusters must be >= 1")
            if not self.rays_per_cluster or self.rays_per_cluster < 1:
                raise ValueError("rays_per_cluster must be >= 1")
            if self.angle_spread is None or self.angle_spread < 0.0:
                raise ValueError("angle_spread must be >= 0")
            if self.los_factor is None or self.los_factor < 0.0:
                raise ValueError(f"los_factor must be >= 0, got {self.los_factor}")
        elif self.kind == "sparse-angular":
            if not self.active_taps or not 1 <= self.active_taps <= self.nt:
                raise ValueError(
                    f"active_taps must lie in 1..{self.nt}, got {self.active_taps}"
                )
        elif self.kind == "analytic-gaussian":
            if self.covariance is None:
                raise ValueError("analytic-gaussian requires an explicit covariance")
            C = np.asarray(self.covariance)
            if C.shape != (self.nt, self.nt):
                raise ValueError(
                    f"covariance must be ({self.nt}, {self.nt}), got {C.shape}"
                )
            psd_factor(C)  # raises if not Hermitian PSD
        return self

    def to_json_dict(self) -> dict:
        d = {"kind": self.kind, "nr": self.nr, "nt": self.nt}
        for name in ("r", "clusters", "rays_per_cluster", "angle_spread",
                     "los_factor", "active_taps"):
            value = getattr(self, name)
            if value is not None:
                d[name] = value
        if self.covariance is not None:
            C = np.asarray(self.covariance, dtype=np.complex128)
            d["covariance"] = {"re": C.real.tolist(), "im": C.imag.tolist()}
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "ChannelModelSpec":
        d = dict(d)
        cov = d.pop("covariance", None)
        if cov is not None:
            cov = np.asarray(cov["re"], dtype=np.float64) + 1j * np.asarray(
                cov["im"], dtype=np.float64
            )
        known = {
            "kind", "nr", "nt", "r", "clusters", "rays_per_cluster",
            "angle_spread", "los_factor", "active_taps",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown channel spec fields: {sorted(unknown)}")
        return ChannelModelSpec(covariance=cov, **d).validate()


@dataclass(frozen=True, eq=False)
class Dataset:
    """A batch of channel realizations drawn from one environment."""

    spec: ChannelModelSpec
    samples: np.ndarray  # (n, nr, nt) complex128
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 3 or samples.shape[0] < 1:
            raise ValueError(f"samples must be (n, nr, nt) with n >= 1, got {samples.shape}")
        if samples.shape[1:] != (self.spec.nr, self.spec.nt):
            raise ValueError("sample dims do not match the channel spec")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]


def exponential_correlation(n: int, r: float) -> np.ndarray:
    """Toeplitz correlation matrix ``C[i, j] = r^|i - j|``."""
    if not 0.0 <= r < 1.0:
        raise ValueError(f"correlation must lie in [0, 1), got {r}")
    return scipy.linalg.toeplitz(r ** np.arange(n)).astype(np.complex128)


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix of size ``n``."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def angular_transform(H: np.ndarray, Fr: np.ndarray, Ft: np.ndarray) -> np.ndarray:
    """Spatial-to-angular change of basis ``Fr^H @ H @ Ft``."""
    return Fr.conj().T @ H @ Ft


def _steering(n: int, angles: np.ndarray) -> np.ndarray:
    """Half-wavelength ULA steering vectors, shape ``angles.shape + (n,)``."""
    phase = np.pi * np.sin(np.asarray(angles, dtype=np.float64))[..., None]
    return np.exp(1j * phase * np.arange(n))


def _gen_row_gaussian(C: np.ndarray, n: int, nr: int, gen: np.random.Generator) -> np.ndarray:
    F = psd_factor(C)
    z = complex_normal(gen, (n, nr, C.shape[0]))
    return z @ F.T


def _gen_clustered(spec: ChannelModelSpec, n: int, gen: np.random.Generator) -> np.ndarray:
    n_rays = spec.clusters * spec.rays_per_cluster
    aod_centers = gen.uniform(-np.pi / 2, np.pi / 2, (n, spec.clusters))
    aoa_centers = gen.uniform(-np.pi / 2, np.pi / 2, (n, spec.clusters))
    spread = spec.angle_spread
    aod = np.repeat(aod_centers, spec.rays_per_cluster, axis=1)
    aoa = np.repeat(aoa_centers, spec.rays_per_cluster, axis=1)
    aod = aod + spread * gen.standard_normal((n, n_rays))
    aoa = aoa + spread * gen.standard_normal((n, n_rays))
    gains = complex_normal(gen, (n, n_rays)) / np.sqrt(n_rays)
    a_r = _steering(spec.nr, aoa)  # (n, n_rays, nr)
    a_t = _steering(spec.nt, aod)  # (n, n_rays, nt)
    H = np.einsum("nk,nkr,nkt->nrt", gains, a_r, a_t.conj())
    if spec.los_factor > 0.0:
        los_aod = gen.uniform(-np.pi / 2, np.pi / 2, n)
        los_aoa = gen.uniform(-np.pi / 2, np.pi / 2, n)
        phase = np.exp(2j * np.pi * gen.random(n))
        los = np.einsum(
            "n,nr,nt->nrt", phase, _steering(spec.nr, los_aoa), _steering(spec.nt, los_aod).conj()
        )
        k = spec.los_factor
        H = np.sqrt(k / (k + 1.0)) * los + np.sqrt(1.0 / (k + 1.0)) * H
    return H


def _gen_sparse_angular(spec: ChannelModelSpec, n: int, gen: np.random.Generator) -> np.ndarray:
    taps = spec.active_taps
    # distinct active transmit-angle columns per sample
    cols = np.argsort(gen.random((n, spec.nt)), axis=1)[:, :taps]
    values = complex_normal(gen, (n, spec.nr, taps)) * np.sqrt(spec.nt / taps)
    X = np.zeros((n, spec.nr, spec.nt), dtype=np.complex128)
    idx = np.broadcast_to(cols[:, None, :], (n, spec.nr, taps))
    np.put_along_axis(X, idx, values, axis=2)
    Fr = dft_matrix(spec.nr)
    Ft = dft_matrix(spec.nt)
    return Fr @ X @ Ft.conj().T


def generate_dataset(spec: ChannelModelSpec, n: int, rng: RngStream) -> Dataset:
    """Draw ``n`` iid channels from ``spec`` and normalize to unit mean power.

    The normalization is a single global scale over the whole dataset, so
    per-sample power variation within the environment is preserved.
    """
    spec.validate()
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    gen = rng.generator()
    if spec.kind == "correlated-gaussian":
        H = _gen_row_gaussian(exponential_correlation(spec.nt, spec.r), n, spec.nr, gen)
    elif spec.kind == "analytic-gaussian":
        H = _gen_row_gaussian(np.asarray(spec.covariance), n, spec.nr, gen)
    elif spec.kind == "clustered-multipath":
        H = _gen_clustered(spec, n, gen)
    elif spec.kind == "sparse-angular":
        H = _gen_sparse_angular(spec, n, gen)
    else:  # pragma: no cover - guarded by validate()
        raise ValueError(f"unknown channel kind {spec.kind!r}")
    power = np.mean(np.abs(H) ** 2)
    if power <= 0.0:
        raise ValueError("generated dataset has zero power")
    H = H / np.sqrt(power)
    return Dataset(spec=spec, samples=H, seed=rng.seed, stream_id=rng.stream_id)


def make_pilots(nt: int, n_pilots: int, rng: RngStream) -> np.ndarray:
    """Random QPSK pilot matrix of shape ``(nt, n_pilots)``.

    Entries are drawn uniformly from ``(+-1 +- 1j) / sqrt(2)`` and therefore
    have unit modulus exactly.
    """
    if nt < 1 or n_pilots < 1:
        raise ValueError(f"pilot dims must be >= 1, got ({nt}, {n_pilots})")
    gen = rng.generator()
    re = 2.0 * gen.integers(0, 2, (nt, n_pilots)) - 1.0
    im = 2.0 * gen.integers(0, 2, (nt, n_pilots)) - 1.0
    return (re + 1j * im) / np.sqrt(2.0)


def snr_to_noise_var(nt: int, snr_db: float) -> float:
    """Noise variance for an average SNR of ``nt / noise_var``."""
    return nt / 10.0 ** (snr_db / 10.0)


class MeasurementSetup:
    """Pilot matrix, noise level, and cached SVD factors of the pilots.

    Pilot entries must have unit modulus (QPSK) and ``noise_var`` must be
    strictly positive.
    """

    def __init__(self, pilots: np.ndarray, noise_var: float):
        pilots = ensure_complex_matrix(pilots, "pilots")
        if pilots.ndim != 2:
            raise ValueError("pilots must be a 2-D matrix")
        if np.abs(np.abs(pilots) - 1.0).max() > 1e-12:
            raise ValueError("pilot entries must have unit modulus")
        if noise_var <= 0.0:
            raise ValueError(f"noise_var must be > 0, got {noise_var}")
        self.pilots = pilots
        self.noise_var = float(noise_var)
        self.u, self.singular_values, self.v = svd(pilots)

    @property
    def nt(self) -> int:
        return self.pilots.shape[0]

    @property
    def n_pilots(self) -> int:
        return self.pilots.shape[1]

    @property
    def pilot_density(self) -> float:
        return self.n_pilots / self.nt

    @classmethod
    def from_snr(cls, pilots: np.ndarray, snr_db: float) -> "MeasurementSetup":
        pilots = np.asarray(pilots)
        return cls(pilots, snr_to_noise_var(pilots.shape[0], snr_db))


def simulate_measurement(
    H: np.ndarray, setup: MeasurementSetup, rng: RngStream
) -> np.ndarray:
    """Received pilots ``Y = H P + N`` with ``N`` iid CN(0, noise_var).

    Leading batch axes on ``H`` are supported.
    """
    H = ensure_complex_matrix(H, "H")
    if H.shape[-1] != setup.nt:
        raise ValueError(
            f"channel has {H.shape[-1]} transmit antennas, pilots expect {setup.nt}"
        )
    noise = complex_normal(rng.generator(), H.shape[:-1] + (setup.n_pilots,))
    return H @ setup.pilots + np.sqrt(setup.noise_var) * noise


def _pair_ratio(H_true: np.ndarray, H_est: np.ndarray) -> np.ndarray:
    H_true = np.asarray(H_true, dtype=np.complex128)
    H_est = np.asarray(H_est, dtype=np.complex128)
    if H_true.shape != H_est.shape:
        raise ValueError(f"shape mismatch: {H_true.shape} vs {H_est.shape}")
    err = np.sum(np.abs(H_true - H_est) ** 2, axis=(-2, -1))
    ref = np.sum(np.abs(H_true) ** 2, axis=(-2, -1))
    if np.any(ref == 0.0):
        raise ValueError("nmse undefined for a zero reference channel")
    return err / ref


def nmse(H_true, H_est) -> float:
    """Normalized mean square error, averaged over any leading batch axes."""
    if isinstance(H_true, (list, tuple)):
        H_true = np.stack([np.asarray(h) for h in H_true])
        H_est = np.stack([np.asarray(h) for h in H_est])
    return float(np.mean(_pair_ratio(H_true, H_est)))


def nmse_db(H_true, H_est) -> float:
    """``10 log10`` of :func:`nmse`."""
    return float(10.0 * np.log10(nmse(H_true, H_est)))


# ---------------------------------------------------------------------------
# Binary dataset format ("CHDS")
#
# magic "CHDS" | u32 version=1 | u32 nr | u32 nt | u64 count | u8 dtype
# (0 = f32, 1 = f64) | count*nr*nt interleaved (re, im) pairs, row-major,
# little-endian | UTF-8 JSON trailer {"spec": ..., "seed": ..., "stream_id": ...}
# ---------------------------------------------------------------------------

_CHDS_MAGIC = b"CHDS"
_CHDS_VERSION = 1
_CHDS_HEADER = struct.Struct("<4sIIIQB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_dataset(path, dataset: Dataset, dtype: str = "f64") -> None:
    """Write a dataset in the CHDS binary format."""
    code = {"f32": 0, "f64": 1}.get(dtype)
    if code is None:
        raise ValueError(f"dtype must be 'f32' or 'f64', got {dtype!r}")
    samples = dataset.samples
    n, nr, nt = samples.shape
    payload = np.empty((n, nr, nt, 2), dtype=_DTYPES[code])
    payload[..., 0] = samples.real
    payload[..., 1] = samples.imag
    trailer = json.dumps(
        {
            "spec": dataset.spec.to_json_dict(),
            "seed": dataset.seed,
            "stream_id": dataset.stream_id,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHDS_HEADER.pack(_CHDS_MAGIC, _CHDS_VERSION, nr, nt, n, code))
        fh.write(payload.tobytes())
        fh.write(trailer)


def load_dataset(path) -> Dataset:
    """Read a CHDS file; rejects unknown magic or version."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CHDS_HEADER.size:
        raise ValueError(f"{path}: truncated dataset file")
    magic, version, nr, nt, count, code = _CHDS_HEADER.unpack_from(raw)
    if magic != _CHDS_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {_CHDS_MAGIC!r}")
    if version != _CHDS_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise ValueError(f"{path}: unknown dtype code {code}")
    dt = _DTYPES[code]
    nbytes = count * nr * nt * 2 * dt.itemsize
    start = _CHDS_HEADER.size
    if len(raw) < start + nbytes:
        raise ValueError(f"{path}: payload shorter than header declares")
    flat = np.frombuffer(raw, dtype=dt, count=count * nr * nt * 2, offset=start)
    pairs = flat.reshape(count, nr, nt, 2).astype(np.float64)
    samples = pairs[..., 0] + 1j * pairs[..., 1]
    meta = json.loads(raw[start + nbytes:].decode("utf-8"))
    spec = ChannelModelSpec.from_json_dict(meta["spec"])
    return Dataset(
        spec=spec,
        samples=samples,
        seed=int(meta["seed"]),
        stream_id=int(meta.get("stream_id", 0)),
    )
