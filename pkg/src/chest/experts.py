"""Score priors: analytic Gaussian references and trained denoiser experts.

A *prior* is anything exposing ``predict_epsilon(H_t, t)``: given a noisy
channel at diffusion step ``t`` it returns the expected injected noise, from
which the marginal score follows as ``-eps / sqrt(1 - abar_t)``.  Analytic
priors compute the exact prediction in closed form and serve as verification
references; :class:`DenoiserPrior` wraps a trained network.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .channelgen import Dataset
from .denoiser import AdamOptimizer, DenoiserNetwork
from .diffusion import NoiseSchedule, score_from_epsilon
from .numerics import RngStream, complex_normal, psd_factor, to_complex, to_real_channels

__all__ = [
    "ScorePrior",
    "AnalyticGaussianPrior",
    "AnalyticGMMPrior",
    "DenoiserPrior",
    "train_expert",
    "log_prior_elbo",
    "refine_estimate",
    "subsample_steps",
    "save_expert_weights",
    "load_expert_weights",
]


class ScorePrior:
    """Base class for noise-prediction priors.

    Subclasses implement :meth:`predict_epsilon`; inputs may carry leading
    batch axes and outputs always match the input shape.
    """

    expert_id: str = "prior"
    nr: int
    nt: int
    schedule: NoiseSchedule

    def predict_epsilon(self, H_t: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def score(self, H_t: np.ndarray, t: int) -> np.ndarray:
        """Marginal score implied by the noise prediction."""
        return score_from_epsilon(self.predict_epsilon(H_t, t), t, self.schedule)

    def _check(self, H_t: np.ndarray) -> np.ndarray:
        H_t = np.asarray(H_t, dtype=np.complex128)
        if H_t.shape[-2:] != (self.nr, self.nt):
            raise ValueError(
                f"{self.expert_id}: expected trailing dims ({self.nr}, {self.nt}), "
                f"got {H_t.shape[-2:]}"
            )
        return H_t


class AnalyticGaussianPrior(ScorePrior):
    """Exact noise predictor for channels with iid CN(0, C) rows.

    At step ``t`` each row of ``H_t`` is marginally CN(0, Sigma_t) with
    ``Sigma_t = abar_t C + (1 - abar_t) I``, so the ideal prediction is
    ``eps* = sqrt(1 - abar_t) * H_t @ Sigma_t^{-T}``.  The eigenbasis of
    ``C`` is factored once; every step reuses it.
    """

    def __init__(self, covariance: np.ndarray, schedule: NoiseSchedule,
                 nr: int, expert_id: str = "gaussian"):
        C = np.asarray(covariance, dtype=np.complex128)
        psd_factor(C)  # validates Hermitian PSD
        self.covariance = C
        self.schedule = schedule
        self.nr = int(nr)
        self.nt = C.shape[0]
        self.expert_id = expert_id
        self._eigvals, self._eigvecs = np.linalg.eigh(C)

    def _marginal_inv_transpose(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Row-applied ``Sigma_t^{-T}`` and the marginal eigenvalues."""
        abar = self.schedule.alpha_bar(t)
        d = abar * np.clip(self._eigvals, 0.0, None) + (1.0 - abar)
        Q = self._eigvecs
        return (Q.conj() * (1.0 / d)) @ Q.T, d

    def predict_epsilon(self, H_t: np.ndarray, t: int) -> np.ndarray:
        H_t = self._check(H_t)
        M, _ = self._marginal_inv_transpose(t)
        abar = self.schedule.alpha_bar(t)
        return np.sqrt(1.0 - abar) * (H_t @ M)

    def log_marginal(self, H_t: np.ndarray, t: int) -> np.ndarray:
        """Log-density of ``H_t`` under the step-``t`` marginal, per sample."""
        H_t = self._check(H_t)
        M, d = self._marginal_inv_transpose(t)
        quad = np.sum((H_t.conj() * (H_t @ M)).real, axis=(-2, -1))
        logdet = float(np.sum(np.log(d)))
        return -quad - self.nr * (logdet + self.nt * np.log(np.pi))


class AnalyticGMMPrior(ScorePrior):
    """Exact noise predictor for a finite mixture of row-Gaussian components.

    The mixture score is the responsibility-weighted sum of component scores,
    with responsibilities computed from the component marginals at step ``t``.
    """

    def __init__(self, weights, covariances, schedule: NoiseSchedule,
                 nr: int, expert_id: str = "gmm"):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or len(covariances) != w.size:
            raise ValueError("need one weight per covariance")
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.weights = w
        self.components = [
            AnalyticGaussianPrior(C, schedule, nr, expert_id=f"{expert_id}[{j}]")
            for j, C in enumerate(covariances)
        ]
        nts = {c.nt for c in self.components}
        if len(nts) != 1:
            raise ValueError("all component covariances must share one size")
        self.schedule = schedule
        self.nr = int(nr)
        self.nt = nts.pop()
        self.expert_id = expert_id

    def responsibilities(self, H_t: np.ndarray, t: int) -> np.ndarray:
        H_t = self._check(H_t)
        logp = np.stack(
            [c.log_marginal(H_t, t) for c in self.components], axis=-1
        ) + np.log(self.weights)
        logp -= logp.max(axis=-1, keepdims=True)
        p = np.exp(logp)
        return p / p.sum(axis=-1, keepdims=True)

    def predict_epsilon(self, H_t: np.ndarray, t: int) -> np.ndarray:
        H_t = self._check(H_t)
        resp = self.responsibilities(H_t, t)
        eps = np.stack(
            [c.predict_epsilon(H_t, t) for c in self.components], axis=-1
        )
        return np.sum(eps * resp[..., None, None, :], axis=-1)


class DenoiserPrior(ScorePrior):
    """Trained-network expert; the network itself stays immutable here."""

    def __init__(self, network: DenoiserNetwork, schedule: NoiseSchedule,
                 expert_id: str = "expert"):
        self.network = network
        self.schedule = schedule
        self.nr = network.nr
        self.nt = network.nt
        self.expert_id = expert_id

    def predict_epsilon(self, H_t: np.ndarray, t: int) -> np.ndarray:
        H_t = self._check(H_t)
        lead = H_t.shape[:-2]
        x = to_real_channels(H_t).reshape((-1, 2, self.nr, self.nt))
        eps = self.network.predict(x, float(t))
        return to_complex(eps).reshape(lead + (self.nr, self.nt))


def train_expert(
    dataset,
    net: DenoiserNetwork,
    schedule: NoiseSchedule,
    epochs: int,
    batch_size: int = 128,
    learning_rate: float = 1e-4,
    rng: RngStream | None = None,
) -> list[float]:
    """Train a denoiser on clean channel samples; returns per-epoch mean loss.

    Each example draws a uniform step ``t`` and fresh CN(0, I) noise, corrupts
    the sample, and regresses the network output onto the injected noise.  The
    loss is the squared error per complex channel entry, optimized with Adam.
    """
    samples = dataset.samples if isinstance(dataset, Dataset) else np.asarray(dataset)
    samples = np.asarray(samples, dtype=np.complex128)
    if samples.ndim != 3 or samples.shape[0] < 1:
        raise ValueError("training data must be a nonempty (n, nr, nt) array")
    if samples.shape[1:] != (net.nr, net.nt):
        raise ValueError(
            f"data dims {samples.shape[1:]} do not match network ({net.nr}, {net.nt})"
        )
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = rng or RngStream(0)
    n = samples.shape[0]
    n_entries = net.nr * net.nt
    opt = AdamOptimizer(net, learning_rate=learning_rate)
    history = []
    for epoch in range(epochs):
        gen = rng.derive("epoch", epoch).generator()
        order = gen.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            h0 = samples[idx]
            t = gen.integers(1, schedule.num_steps + 1, idx.size)
            abar = schedule.alpha_bars[t - 1][:, None, None]
            eps = complex_normal(gen, h0.shape)
            h_t = np.sqrt(abar) * h0 + np.sqrt(1.0 - abar) * eps
            pred = net.forward(to_real_channels(h_t), t.astype(np.float64))
            diff = pred - to_real_channels(eps)
            losses.append(float(np.sum(diff * diff)) / (idx.size * n_entries))
            _, grads = net.backward(2.0 * diff / (idx.size * n_entries))
            opt.step(grads)
        history.append(float(np.mean(losses)))
    return history


def subsample_steps(num_steps: int, count: int = 10) -> tuple[int, ...]:
    """``count`` distinct steps spread evenly over ``1..num_steps``."""
    if not 1 <= count <= num_steps:
        raise ValueError(f"count must lie in 1..{num_steps}, got {count}")
    steps = np.unique(np.round(np.linspace(1, num_steps, count)).astype(int))
    return tuple(int(t) for t in steps)


def median_step(t_subset) -> int:
    """Upper-median element; the re-noising level for refinement."""
    ordered = sorted(t_subset)
    return int(ordered[len(ordered) // 2])


def log_prior_elbo(
    prior: ScorePrior,
    H_hat: np.ndarray,
    schedule: NoiseSchedule,
    t_subset,
    rng: RngStream,
) -> float:
    """Subsampled evidence-bound surrogate for ``log p(H_hat)`` under a prior.

    For each step in ``t_subset`` one noise draw corrupts ``H_hat`` and the
    prior's prediction error ``|eps - eps_pred|^2`` is accumulated; the result
    is the negated sum (larger means the prior explains the estimate better).
    Passing an equal stream for several priors pairs their noise draws, which
    is exactly what a responsibility update wants.
    """
    t_subset = tuple(t_subset)
    if not t_subset:
        raise ValueError("t_subset must be nonempty")
    H_hat = np.asarray(H_hat, dtype=np.complex128)
    gen = rng.generator()
    total = 0.0
    for t in sorted(t_subset):
        abar = schedule.alpha_bar(schedule._check_step(t))
        eps = complex_normal(gen, H_hat.shape)
        h_t = np.sqrt(abar) * H_hat + np.sqrt(1.0 - abar) * eps
        pred = prior.predict_epsilon(h_t, t)
        total += float(np.sum(np.abs(eps - pred) ** 2))
    return -total


def refine_estimate(
    prior: ScorePrior,
    H_hat: np.ndarray,
    tau: int,
    schedule: NoiseSchedule,
    rng: RngStream,
) -> np.ndarray:
    """Re-noise ``H_hat`` to step ``tau`` and denoise it in one shot.

    ``H_tilde = sqrt(abar) H_hat + sqrt(1-abar) eps`` followed by the inverse
    map using the prior's noise prediction; a prediction matching the injected
    noise returns ``H_hat`` exactly.
    """
    tau = schedule._check_step(tau)
    H_hat = np.asarray(H_hat, dtype=np.complex128)
    abar = schedule.alpha_bar(tau)
    eps = complex_normal(rng.generator(), H_hat.shape)
    h_tilde = np.sqrt(abar) * H_hat + np.sqrt(1.0 - abar) * eps
    pred = prior.predict_epsilon(h_tilde, tau)
    return (h_tilde - np.sqrt(1.0 - abar) * pred) / np.sqrt(abar)


# ---------------------------------------------------------------------------
# Weights file ("DMWT"):
# magic "DMWT" | u32 version=1 | u32 header_len | UTF-8 JSON header |
# concatenated little-endian f64 parameter arrays in header-declared order.
# ---------------------------------------------------------------------------

_DMWT_MAGIC = b"DMWT"
_DMWT_VERSION = 1
_DMWT_PREFIX = struct.Struct("<4sII")


def save_expert_weights(
    path,
    net: DenoiserNetwork,
    schedule: NoiseSchedule,
    expert_id: str,
    training_seed: int,
) -> None:
    params = net.parameters()
    header = {
        "nr": net.nr,
        "nt": net.nt,
        "s_init": net.s_init,
        "widths": list(net.widths),
        "layers": [{"name": name, "shape": list(p.shape)} for name, p in params],
        "schedule": {
            "steps": schedule.num_steps,
            "beta_start": float(schedule.betas[0]),
            "beta_end": float(schedule.betas[-1]),
        },
        "expert_id": expert_id,
        "training_seed": int(training_seed),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_DMWT_PREFIX.pack(_DMWT_MAGIC, _DMWT_VERSION, len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(p.astype("<f8").tobytes())


def load_expert_weights(path) -> tuple[DenoiserNetwork, dict]:
    """Rebuild a network from a DMWT file; returns ``(net, header)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _DMWT_PREFIX.size:
        raise ValueError(f"{path}: truncated weights file")
    magic, version, hlen = _DMWT_PREFIX.unpack_from(raw)
    if magic != _DMWT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {_DMWT_MAGIC!r}")
    if version != _DMWT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    header = json.loads(raw[_DMWT_PREFIX.size:_DMWT_PREFIX.size + hlen].decode("utf-8"))
    net = DenoiserNetwork(
        header["nr"], header["nt"], s_init=header["s_init"],
        widths=tuple(header["widths"]), rng=RngStream(0),
    )
    offset = _DMWT_PREFIX.size + hlen
    values = {}
    for layer in header["layers"]:
        shape = tuple(layer["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        values[layer["name"]] = arr.reshape(shape)
        offset += count * 8
    net.set_parameters(values)
    return net, header
