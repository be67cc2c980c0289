"""Channel estimators: closed-form baselines, diffusion posterior samplers,
and the variational mixture-of-experts loop.

All estimators consume a received-pilot matrix ``Y`` together with a
:class:`~chest.channelgen.MeasurementSetup` and return a channel estimate of
shape ``(nr, nt)`` (leading batch axes are supported where noted).  Scores
follow the conjugate-gradient convention documented in :mod:`chest.numerics`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from .channelgen import MeasurementSetup, dft_matrix
from .diffusion import NoiseSchedule
from .experts import (
    ScorePrior,
    log_prior_elbo,
    median_step,
    refine_estimate,
    subsample_steps,
)
from .numerics import RngStream, complex_normal, ensure_complex_matrix

__all__ = [
    "EstimatorReport",
    "rls_estimate",
    "lasso_ista",
    "lasso_lambda_max",
    "likelihood_score",
    "posterior_score",
    "default_likelihood_weight",
    "deterministic_dm_estimate",
    "annealed_langevin_estimate",
    "expected_log_pi",
    "data_consistency_loglik",
    "update_qz",
    "update_qpi",
    "dmvb_estimate",
]


@dataclass
class EstimatorReport:
    """Outcome of one estimation run with convergence bookkeeping."""

    h_hat: np.ndarray
    iterations: int
    rho_trajectory: np.ndarray  # (iterations + 1, K) responsibilities
    reverse_steps: int
    wall_time_s: float
    converged: bool
    nmse_db: float | None = None

    @property
    def rho(self) -> np.ndarray:
        return self.rho_trajectory[-1]


def rls_estimate(Y: np.ndarray, setup: MeasurementSetup) -> np.ndarray:
    """Regularized least squares ``Y P^H (P P^H + noise_var I)^{-1}``.

    Coincides with the linear-MMSE estimator for an isotropic unit-power
    Gaussian channel prior.  Supports leading batch axes on ``Y``.
    """
    Y = _check_measurement(Y, setup)
    P = setup.pilots
    gram = P @ P.conj().T + setup.noise_var * np.eye(setup.nt)
    return np.linalg.solve(gram.T, (Y @ P.conj().T).swapaxes(-2, -1)).swapaxes(-2, -1)


def lasso_lambda_max(Y: np.ndarray, setup: MeasurementSetup,
                     dft_pair=None) -> float:
    """Smallest regularization weight for which the all-zero solution is optimal."""
    Fr, Ft = dft_pair if dft_pair is not None else _dft_pair(Y.shape[-2], setup.nt)
    grad0 = Fr.conj().T @ (Y @ setup.pilots.conj().T) @ Ft
    return float(np.abs(grad0).max())


def _dft_pair(nr: int, nt: int):
    return dft_matrix(nr), dft_matrix(nt)


def lasso_ista(
    Y: np.ndarray,
    setup: MeasurementSetup,
    lam: float,
    dft_pair=None,
    iters: int = 200,
    step: float | None = None,
    return_objectives: bool = False,
):
    """Angular-domain l1-regularized recovery by proximal gradient (ISTA).

    Minimizes ``0.5 ||Y - H P||_F^2 + lam * ||Fr^H H Ft||_1`` over ``H`` via
    soft-thresholded gradient steps on the angular coefficients.  The step
    size defaults to ``1 / ||P||_2^2`` (the largest provably convergent one);
    an objective increase beyond 1e-9 raises, flagging a bad step size.
    """
    Y = _check_measurement(Y, setup)
    if Y.ndim != 2:
        raise ValueError("lasso_ista expects a single measurement matrix")
    if lam < 0.0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    nr = Y.shape[0]
    Fr, Ft = dft_pair if dft_pair is not None else _dft_pair(nr, setup.nt)
    lipschitz = float(setup.singular_values[0]) ** 2
    if step is None:
        step = 1.0 / lipschitz
    elif step > 1.0 / lipschitz + 1e-12:
        raise ValueError(f"step {step} exceeds 1/||P||_2^2 = {1.0 / lipschitz:.3e}")

    B = Ft.conj().T @ setup.pilots  # angular-domain pilot map
    X = np.zeros((nr, setup.nt), dtype=np.complex128)
    objectives = []
    prev = np.inf
    for _ in range(iters):
        resid = Fr @ (X @ B) - Y
        obj = 0.5 * float(np.sum(np.abs(resid) ** 2)) + lam * float(np.abs(X).sum())
        if obj > prev + 1e-9:
            raise RuntimeError(
                f"ISTA objective increased ({prev:.6e} -> {obj:.6e}); reduce the step size"
            )
        prev = obj
        objectives.append(obj)
        grad = Fr.conj().T @ resid @ B.conj().T
        X = _soft_threshold(X - step * grad, step * lam)
    H = Fr @ X @ Ft.conj().T
    if return_objectives:
        return H, objectives
    return H


def _soft_threshold(X: np.ndarray, radius: float) -> np.ndarray:
    mag = np.abs(X)
    scale = np.maximum(mag - radius, 0.0) / np.maximum(mag, 1e-300)
    return X * scale


def likelihood_score(
    Y: np.ndarray,
    H_t: np.ndarray,
    t: int,
    setup: MeasurementSetup,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Score of the step-``t`` noise-perturbed measurement likelihood.

    Treating ``H_t / sqrt(abar_t)`` as a Gaussian surrogate for the clean
    channel widens the effective noise, giving (with cached SVD ``P = U S V^H``)

        (1/sqrt(abar)) (Y V - H_t U S / sqrt(abar))
            @ diag(s / ((1-abar)/abar s^2 + noise_var)) @ U^H

    which at ``abar = 1`` reduces to ``(Y - H_t P) P^H / noise_var``.
    """
    Y = _check_measurement(Y, setup)
    H_t = ensure_complex_matrix(H_t, "H_t")
    abar = schedule.alpha_bar(schedule._check_step(t))
    s = setup.singular_values
    root = np.sqrt(abar)
    gain = s / ((1.0 - abar) / abar * s**2 + setup.noise_var)
    inner = Y @ setup.v - (H_t @ setup.u) * (s / root)
    return (inner * gain) @ setup.u.conj().T / root


def default_likelihood_weight(setup: MeasurementSetup) -> float:
    """Heuristic likelihood weight ``max(1, round(nt / n_pilots))``."""
    return float(max(1, round(setup.nt / setup.n_pilots)))


def posterior_score(
    H_t: np.ndarray,
    t: int,
    Y: np.ndarray,
    setup: MeasurementSetup,
    priors: list[ScorePrior],
    rho: np.ndarray,
    s: float,
    schedule: NoiseSchedule | None = None,
) -> np.ndarray:
    """Responsibility-weighted prior scores plus the scaled likelihood score."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (len(priors),):
        raise ValueError(f"rho must have one weight per prior, got shape {rho.shape}")
    if abs(rho.sum() - 1.0) > 1e-9:
        raise ValueError("responsibilities must sum to 1")
    if s < 1.0:
        raise ValueError(f"likelihood weight s must be >= 1, got {s}")
    if schedule is None:
        schedule = priors[0].schedule
    total = s * likelihood_score(Y, H_t, t, setup, schedule)
    for weight, prior in zip(rho, priors):
        if weight != 0.0:
            total = total + weight * prior.score(H_t, t)
    return total


def deterministic_dm_estimate(
    Y: np.ndarray,
    setup: MeasurementSetup,
    priors: list[ScorePrior],
    rho: np.ndarray,
    s: float,
    schedule: NoiseSchedule,
    rng: RngStream,
    h_init: np.ndarray | None = None,
) -> np.ndarray:
    """Posterior-mean reverse sweep without stochastic injection.

    Starting from ``H_T ~ CN(0, I)`` (or ``h_init``), each step applies
    ``H_{t-1} = (H_t + (1 - alpha_t) * posterior_score) / sqrt(alpha_t)``
    down to ``t = 1``; the result is the final ``H_0``.  Leading batch axes
    on ``Y`` are supported and estimated jointly.
    """
    Y = _check_measurement(Y, setup)
    shape = Y.shape[:-1] + (setup.nt,)
    if h_init is not None:
        H = np.array(h_init, dtype=np.complex128)
        if H.shape != shape:
            raise ValueError(f"h_init must have shape {shape}")
    else:
        H = complex_normal(rng.generator(), shape)
    for t in range(schedule.num_steps, 0, -1):
        alpha = schedule.alpha(t)
        score = posterior_score(H, t, Y, setup, priors, rho, s, schedule)
        H = (H + (1.0 - alpha) * score) / np.sqrt(alpha)
        if not np.all(np.isfinite(H)):
            raise FloatingPointError(f"reverse sweep diverged at step t={t}")
    return H


def annealed_langevin_estimate(
    Y: np.ndarray,
    setup: MeasurementSetup,
    prior: ScorePrior,
    schedule: NoiseSchedule,
    rng: RngStream,
    steps_per_t: int = 1,
    s: float = 1.0,
    step_rule=None,
    noise_rule=None,
) -> np.ndarray:
    """Stochastic posterior sampling via annealed Langevin iterations.

    At each noise level ``t`` (from T down to 1) the state takes
    ``steps_per_t`` updates ``H += zeta_t * posterior_score + xi_t * Z``.
    Defaults: ``zeta_t = 0.3 * (1 - abar_t)`` and ``xi_t = sqrt(2 zeta_t)``;
    pass ``noise_rule=lambda t, z: 0.0`` for a noise-free ascent.
    """
    if steps_per_t < 1:
        raise ValueError("steps_per_t must be >= 1")
    if step_rule is None:
        step_rule = lambda t: 0.3 * (1.0 - schedule.alpha_bar(t))
    if noise_rule is None:
        noise_rule = lambda t, zeta: np.sqrt(2.0 * zeta)
    Y = _check_measurement(Y, setup)
    shape = Y.shape[:-1] + (setup.nt,)
    gen = rng.generator()
    H = complex_normal(gen, shape)
    rho = np.ones(1)
    for t in range(schedule.num_steps, 0, -1):
        zeta = float(step_rule(t))
        xi = float(noise_rule(t, zeta))
        for _ in range(steps_per_t):
            H = H + zeta * posterior_score(H, t, Y, setup, [prior], rho, s, schedule)
            if xi != 0.0:
                H = H + xi * complex_normal(gen, shape)
        if not np.all(np.isfinite(H)):
            raise FloatingPointError(f"Langevin sampling diverged at level t={t}")
    return H


def expected_log_pi(gamma: np.ndarray) -> np.ndarray:
    """Mean log mixing weights under a Dirichlet: ``psi(g_k) - psi(sum g)``."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma <= 0.0):
        raise ValueError("Dirichlet parameters must be strictly positive")
    return digamma(gamma) - digamma(gamma.sum())


def data_consistency_loglik(
    Y: np.ndarray, H_k: np.ndarray, setup: MeasurementSetup
) -> float:
    """Measurement fit of a refined estimate: ``-||Y - H_k P||^2 / (2 noise_var)``."""
    Y = _check_measurement(Y, setup)
    resid = Y - np.asarray(H_k, dtype=np.complex128) @ setup.pilots
    return -float(np.sum(np.abs(resid) ** 2)) / (2.0 * setup.noise_var)


def update_qz(
    H_hat: np.ndarray,
    Y: np.ndarray,
    setup: MeasurementSetup,
    priors: list[ScorePrior],
    gamma: np.ndarray,
    schedule: NoiseSchedule,
    t_subset,
    rng: RngStream,
) -> np.ndarray:
    """Expert responsibilities from evidence surrogates and data consistency.

    For each expert the logit sums its prior-evidence surrogate of ``H_hat``,
    the Dirichlet mean log weight, and the measurement fit of its one-step
    refined estimate; a max-subtracted softmax maps logits to the simplex.
    All experts share the same noise draws (paired comparisons).
    """
    t_subset = tuple(t_subset)
    tau = median_step(t_subset)
    log_pi = expected_log_pi(gamma)
    elbo_rng = rng.derive("elbo")
    refine_rng = rng.derive("refine")
    logits = np.empty(len(priors))
    for k, prior in enumerate(priors):
        evidence = log_prior_elbo(prior, H_hat, schedule, t_subset, elbo_rng)
        refined = refine_estimate(prior, H_hat, tau, schedule, refine_rng)
        fit = data_consistency_loglik(Y, refined, setup)
        logits[k] = evidence + log_pi[k] + fit
    return softmax(logits)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax; exactly invariant to adding a constant."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def update_qpi(gamma_prior: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Dirichlet posterior parameters ``gamma + rho`` (exact conjugate update)."""
    gamma_prior = np.asarray(gamma_prior, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if gamma_prior.shape != rho.shape:
        raise ValueError("gamma and rho must have matching shapes")
    return gamma_prior + rho


def dmvb_estimate(
    Y: np.ndarray,
    setup: MeasurementSetup,
    priors: list[ScorePrior],
    schedule: NoiseSchedule,
    rng: RngStream,
    s: float | None = None,
    max_iter: int = 10,
    tol: float = 1e-3,
    t_subset=None,
    warm_start: bool = False,
) -> EstimatorReport:
    """Joint expert selection and channel estimation by variational inference.

    Alternates three updates until the responsibilities stabilize or
    ``max_iter`` is hit:

    1. channel update — a deterministic reverse sweep under the current
       responsibility-weighted mixture score (a fresh ``H_T`` per iteration,
       or the previous estimate when ``warm_start`` is set);
    2. responsibility update — :func:`update_qz` on the new estimate;
    3. mixing-weight update — the conjugate Dirichlet step :func:`update_qpi`.

    Responsibilities start uniform and the Dirichlet parameters start at 1.
    Substreams are derived per iteration as ``rng.derive("qh", i)`` and
    ``rng.derive("qz", i)``, so a single-expert run reproduces
    ``deterministic_dm_estimate(..., rng=rng.derive("qh", 1))`` bit for bit.
    """
    if not priors:
        raise ValueError("need at least one prior")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol <= 0.0:
        raise ValueError("tol must be > 0")
    if s is None:
        s = default_likelihood_weight(setup)
    if t_subset is None:
        t_subset = subsample_steps(schedule.num_steps)
    start = time.perf_counter()
    K = len(priors)
    rho = np.full(K, 1.0 / K)
    gamma = np.ones(K)
    trajectory = [rho]
    h_hat = None
    converged = False
    iterations = 0
    for i in range(1, max_iter + 1):
        iterations = i
        h_hat = deterministic_dm_estimate(
            Y, setup, priors, rho, s, schedule, rng.derive("qh", i),
            h_init=h_hat if warm_start else None,
        )
        if not np.all(np.isfinite(h_hat)):
            raise FloatingPointError(f"estimate diverged at outer iteration {i}")
        rho_new = update_qz(
            h_hat, Y, setup, priors, gamma, schedule, t_subset, rng.derive("qz", i)
        )
        gamma = update_qpi(gamma, rho_new)
        delta = float(np.linalg.norm(rho_new - rho))
        rho = rho_new
        trajectory.append(rho)
        if delta < tol:
            converged = True
            break
    return EstimatorReport(
        h_hat=h_hat,
        iterations=iterations,
        rho_trajectory=np.stack(trajectory),
        reverse_steps=iterations * schedule.num_steps,
        wall_time_s=time.perf_counter() - start,
        converged=converged,
    )


def _check_measurement(Y: np.ndarray, setup: MeasurementSetup) -> np.ndarray:
    Y = ensure_complex_matrix(Y, "Y")
    if Y.shape[-1] != setup.n_pilots:
        raise ValueError(
            f"measurement has {Y.shape[-1]} pilot columns, setup expects {setup.n_pilots}"
        )
    return Y
