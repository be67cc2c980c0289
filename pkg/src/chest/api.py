"""Estimator-style interface: ``fit`` trains an expert prior on channel data,
``predict`` maps received pilots to channel estimates.

The classes follow scikit-learn conventions (keyword-only constructor
hyperparameters mirrored by ``get_params``/``set_params``, ``fit`` returning
``self``, trailing-underscore fitted attributes) so they compose with generic
tooling, while the measurement context travels as an explicit argument since
it changes per SNR/pilot configuration.
"""

from __future__ import annotations

import inspect

import numpy as np

from .channelgen import MeasurementSetup
from .denoiser import DenoiserNetwork
from .diffusion import NoiseSchedule, linear_schedule
from .estimators import (
    EstimatorReport,
    annealed_langevin_estimate,
    deterministic_dm_estimate,
    dmvb_estimate,
    lasso_ista,
    lasso_lambda_max,
    rls_estimate,
    subsample_steps,
)
from .experts import DenoiserPrior, ScorePrior, train_expert
from .numerics import RngStream, ensure_complex_matrix

__all__ = [
    "NotFittedError",
    "BaseEstimator",
    "DiffusionExpert",
    "ChannelEstimator",
    "RLSChannelEstimator",
    "LassoChannelEstimator",
    "DiffusionChannelEstimator",
    "LangevinChannelEstimator",
    "DMVBChannelEstimator",
]


class NotFittedError(RuntimeError):
    """Raised when a fitted attribute is used before ``fit``."""


class BaseEstimator:
    """Minimal scikit-learn-style parameter handling."""

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [n for n in sig.parameters if n != "self"]

    def get_params(self) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "BaseEstimator":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items()
                         if not isinstance(v, (np.ndarray, list)))
        return f"{type(self).__name__}({args})"


def _as_batch(Y: np.ndarray) -> tuple[np.ndarray, bool]:
    Y = ensure_complex_matrix(Y, "Y")
    if Y.ndim == 2:
        return Y[None], True
    if Y.ndim == 3:
        return Y, False
    raise ValueError(f"Y must be 2-D or a (batch, nr, n_pilots) stack, got {Y.ndim}-D")


class DiffusionExpert(BaseEstimator, ScorePrior):
    """Trainable diffusion prior over one channel environment.

    ``fit`` consumes a stack of clean channel samples ``(n, nr, nt)`` and
    trains the denoiser; afterwards the object acts as a score prior for any
    of the channel estimators below.
    """

    def __init__(self, s_init: int = 32, widths=(32, 64, 32, 16),
                 schedule: NoiseSchedule | None = None, epochs: int = 20,
                 batch_size: int = 128, learning_rate: float = 1e-4,
                 seed: int = 0, expert_id: str = "expert"):
        self.s_init = s_init
        self.widths = tuple(widths)
        self.schedule = schedule
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.expert_id = expert_id

    def fit(self, H: np.ndarray) -> "DiffusionExpert":
        H = np.asarray(H, dtype=np.complex128)
        if H.ndim != 3:
            raise ValueError(f"training data must be (n, nr, nt), got {H.shape}")
        if self.schedule is None:
            self.schedule = linear_schedule(100, 1e-4, 0.2)
        rng = RngStream(self.seed).derive("expert", self.expert_id)
        self.network_ = DenoiserNetwork(
            H.shape[1], H.shape[2], s_init=self.s_init,
            widths=self.widths, rng=rng.derive("init"),
        )
        self.loss_history_ = train_expert(
            H, self.network_, self.schedule, epochs=self.epochs,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            rng=rng.derive("train"),
        )
        self.nr = self.network_.nr
        self.nt = self.network_.nt
        return self

    def _require_fitted(self) -> DenoiserPrior:
        if not hasattr(self, "network_"):
            raise NotFittedError("DiffusionExpert must be fit before use")
        return DenoiserPrior(self.network_, self.schedule, expert_id=self.expert_id)

    def predict_epsilon(self, H_t: np.ndarray, t: int) -> np.ndarray:
        return self._require_fitted().predict_epsilon(H_t, t)


class ChannelEstimator(BaseEstimator):
    """Common surface: ``estimate`` returns a report, ``predict`` the matrix."""

    def estimate(self, Y: np.ndarray, setup: MeasurementSetup,
                 rng: RngStream | None = None) -> EstimatorReport:
        raise NotImplementedError

    def predict(self, Y: np.ndarray, setup: MeasurementSetup,
                rng: RngStream | None = None) -> np.ndarray:
        """Channel estimate(s) for one measurement or a stacked batch."""
        batch, single = _as_batch(Y)
        rng = rng or RngStream(0)
        out = np.stack([
            self.estimate(batch[i], setup, rng.derive("sample", i)).h_hat
            for i in range(batch.shape[0])
        ])
        return out[0] if single else out

    @staticmethod
    def _report(h_hat: np.ndarray) -> EstimatorReport:
        return EstimatorReport(
            h_hat=h_hat, iterations=1, rho_trajectory=np.ones((1, 1)),
            reverse_steps=0, wall_time_s=0.0, converged=True,
        )


class RLSChannelEstimator(ChannelEstimator):
    """Closed-form regularized least squares."""

    def __init__(self):
        pass

    def estimate(self, Y, setup, rng=None):
        return self._report(rls_estimate(Y, setup))


class LassoChannelEstimator(ChannelEstimator):
    """Angular-domain l1 recovery via ISTA.

    ``lam_fraction`` scales the data-dependent critical weight (the smallest
    one giving an all-zero solution); ``lam`` overrides it with an absolute
    value when set.
    """

    def __init__(self, lam: float | None = None, lam_fraction: float = 0.1,
                 iterations: int = 200):
        self.lam = lam
        self.lam_fraction = lam_fraction
        self.iterations = iterations

    def estimate(self, Y, setup, rng=None):
        lam = self.lam
        if lam is None:
            lam = self.lam_fraction * lasso_lambda_max(Y, setup)
        return self._report(lasso_ista(Y, setup, lam, iters=self.iterations))


class DiffusionChannelEstimator(ChannelEstimator):
    """Deterministic posterior sweep under a single prior (or fixed mixture)."""

    def __init__(self, priors, s: float | None = None, rho=None):
        self.priors = list(priors) if isinstance(priors, (list, tuple)) else [priors]
        self.s = s
        self.rho = rho

    def estimate(self, Y, setup, rng=None):
        rng = rng or RngStream(0)
        priors = [p._require_fitted() if isinstance(p, DiffusionExpert) else p
                  for p in self.priors]
        schedule = priors[0].schedule
        rho = np.asarray(self.rho, dtype=np.float64) if self.rho is not None \
            else np.full(len(priors), 1.0 / len(priors))
        s = self.s if self.s is not None else max(1.0, round(setup.nt / setup.n_pilots))
        h = deterministic_dm_estimate(Y, setup, priors, rho, s, schedule, rng)
        report = self._report(h)
        report.reverse_steps = schedule.num_steps
        return report


class LangevinChannelEstimator(ChannelEstimator):
    """Stochastic annealed sampling under a single prior."""

    def __init__(self, prior, steps_per_t: int = 1, s: float | None = None,
                 step_scale: float = 0.3, noise_scale: float = 1.0):
        self.prior = prior
        self.steps_per_t = steps_per_t
        self.s = s
        self.step_scale = step_scale
        self.noise_scale = noise_scale

    def estimate(self, Y, setup, rng=None):
        rng = rng or RngStream(0)
        prior = self.prior
        if isinstance(prior, DiffusionExpert):
            prior = prior._require_fitted()
        schedule = prior.schedule
        s = self.s if self.s is not None else max(1.0, round(setup.nt / setup.n_pilots))
        h = annealed_langevin_estimate(
            Y, setup, prior, schedule, rng, steps_per_t=self.steps_per_t, s=s,
            step_rule=lambda t: self.step_scale * (1.0 - schedule.alpha_bar(t)),
            noise_rule=lambda t, zeta: self.noise_scale * np.sqrt(2.0 * zeta),
        )
        report = self._report(h)
        report.reverse_steps = schedule.num_steps * self.steps_per_t
        return report


class DMVBChannelEstimator(ChannelEstimator):
    """Variational mixture-of-experts estimation over ``priors``."""

    def __init__(self, priors, s: float | None = None, max_iter: int = 10,
                 tol: float = 1e-3, subsample: int = 10, warm_start: bool = False):
        self.priors = list(priors)
        self.s = s
        self.max_iter = max_iter
        self.tol = tol
        self.subsample = subsample
        self.warm_start = warm_start

    def estimate(self, Y, setup, rng=None):
        rng = rng or RngStream(0)
        priors = [p._require_fitted() if isinstance(p, DiffusionExpert) else p
                  for p in self.priors]
        schedule = priors[0].schedule
        return dmvb_estimate(
            Y, setup, priors, schedule, rng, s=self.s,
            max_iter=self.max_iter, tol=self.tol,
            t_subset=subsample_steps(schedule.num_steps, self.subsample),
            warm_start=self.warm_start,
        )
