"""Lightweight convolutional noise predictor with sinusoidal time conditioning.

The network maps a 2-channel real tensor (stacked real/imag channel parts)
of shape ``(2, nr, nt)`` to a predicted-noise tensor of the same shape.
Five 3x3 convolutions widen the features to ``s_max`` and narrow them back
to 2 channels; after the widening stage every feature channel receives a
per-step affine (FiLM) modulation computed from a sinusoidal embedding of
the diffusion step.  ReLU follows every convolution except the last.

Forward and backward passes are written directly in numpy (internally in
channels-last layout, patches gathered once per layer and pushed through a
single GEMM) so the gradients are exact, reproducible, and cheap to verify
against finite differences.
"""

from __future__ import annotations

import numpy as np

from .numerics import RngStream

__all__ = [
    "time_embedding",
    "film_modulate",
    "DenoiserNetwork",
    "AdamOptimizer",
    "denoiser_forward",
    "denoiser_backward",
]


def time_embedding(t, s_init: int) -> np.ndarray:
    """Sinusoidal positional embedding of step ``t``.

    Components are interleaved ``(sin(t * w_i), cos(t * w_i))`` pairs with
    ``w_i = 10000^(-2i / s_init)``, so values lie in [-1, 1] and ``t = 0``
    maps to ``(0, 1, 0, 1, ...)``.  ``t`` may be a scalar or an array.
    """
    if s_init < 2 or s_init % 2 != 0:
        raise ValueError(f"s_init must be a positive even integer, got {s_init}")
    t = np.asarray(t, dtype=np.float64)
    i = np.arange(s_init // 2, dtype=np.float64)
    freqs = 10000.0 ** (-2.0 * i / s_init)
    angles = t[..., None] * freqs
    emb = np.empty(t.shape + (s_init,), dtype=np.float64)
    emb[..., 0::2] = np.sin(angles)
    emb[..., 1::2] = np.cos(angles)
    return emb


def film_modulate(x: np.ndarray, t_scale: np.ndarray, t_bias: np.ndarray) -> np.ndarray:
    """Channel-wise affine conditioning ``(1 + t_scale) * x + t_bias``.

    ``x`` has shape ``(..., C, h, w)``; ``t_scale`` and ``t_bias`` have shape
    ``(..., C)`` and are broadcast over the spatial positions.
    """
    x = np.asarray(x, dtype=np.float64)
    t_scale = np.asarray(t_scale, dtype=np.float64)
    t_bias = np.asarray(t_bias, dtype=np.float64)
    if t_scale.shape != t_bias.shape or t_scale.shape[-1] != x.shape[-3]:
        raise ValueError(
            f"conditioning length {t_scale.shape} does not match {x.shape[-3]} channels"
        )
    return (1.0 + t_scale)[..., None, None] * x + t_bias[..., None, None]


def _glorot_uniform(gen: np.random.Generator, shape, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, shape)


class _Conv3x3:
    """3x3 convolution, stride 1, padding 1 (spatial dims preserved).

    Weights are stored as ``(c_out, c_in, 3, 3)``; activations flow in
    channels-last layout ``(B, h, w, C)``.  The convolution runs as nine
    accumulated GEMMs, one per kernel tap, on block-contiguous slices of the
    padded input.
    """

    def __init__(self, c_in: int, c_out: int, gen: np.random.Generator):
        self.c_in = c_in
        self.c_out = c_out
        self.weight = _glorot_uniform(gen, (c_out, c_in, 3, 3), c_in * 9, c_out * 9)
        self.bias = np.zeros(c_out)

    def _taps(self) -> np.ndarray:
        # (c_out, c_in, ky, kx) -> (3, 3, c_in, c_out)
        return np.ascontiguousarray(self.weight.transpose(2, 3, 1, 0))

    @staticmethod
    def _pad(x: np.ndarray) -> np.ndarray:
        b, h, w, c = x.shape
        xp = np.zeros((b, h + 2, w + 2, c))
        xp[:, 1:1 + h, 1:1 + w, :] = x
        return xp

    def forward(self, x: np.ndarray):
        b, h, w, c = x.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {c}")
        xp = self._pad(x)
        taps = self._taps()
        y = np.empty((b * h * w, self.c_out))
        y[:] = self.bias
        for ky in range(3):
            for kx in range(3):
                block = np.ascontiguousarray(xp[:, ky:ky + h, kx:kx + w, :])
                y += block.reshape(b * h * w, c) @ taps[ky, kx]
        return y.reshape(b, h, w, self.c_out), (xp, (b, h, w, c))

    def backward(self, grad_y: np.ndarray, cache):
        xp, (b, h, w, c) = cache
        taps = self._taps()
        gm = np.ascontiguousarray(grad_y).reshape(b * h * w, self.c_out)
        grad_b = gm.sum(axis=0)
        grad_taps = np.empty_like(taps)
        grad_xp = np.zeros_like(xp)
        for ky in range(3):
            for kx in range(3):
                block = np.ascontiguousarray(xp[:, ky:ky + h, kx:kx + w, :])
                grad_taps[ky, kx] = block.reshape(b * h * w, c).T @ gm
                grad_xp[:, ky:ky + h, kx:kx + w, :] += (
                    gm @ taps[ky, kx].T
                ).reshape(b, h, w, c)
        grad_w = np.ascontiguousarray(grad_taps.transpose(3, 2, 0, 1))
        grad_x = grad_xp[:, 1:1 + h, 1:1 + w, :]
        return grad_x, grad_w, grad_b


class _Dense:
    def __init__(self, n_in: int, n_out: int, gen: np.random.Generator):
        self.weight = _glorot_uniform(gen, (n_out, n_in), n_in, n_out)
        self.bias = np.zeros(n_out)

    def forward(self, x: np.ndarray):
        return x @ self.weight.T + self.bias, x

    def backward(self, grad_y: np.ndarray, cache):
        x = cache
        return grad_y @ self.weight, grad_y.T @ x, grad_y.sum(axis=0)


class DenoiserNetwork:
    """Noise-prediction CNN for ``(2, nr, nt)`` inputs.

    Parameters
    ----------
    nr, nt : int
        Spatial dimensions (receive/transmit antennas).
    s_init : int
        Time-embedding dimension (even).
    widths : sequence of 4 ints
        Channel widths ``(w1, s_max, w2, w3)`` of the hidden convolutions;
        the full stack is ``2 -> w1 -> s_max -> w2 -> w3 -> 2``.
    rng : RngStream
        Stream for the weight initialization.
    """

    def __init__(self, nr: int, nt: int, s_init: int = 32,
                 widths=(32, 64, 32, 16), rng: RngStream | None = None):
        if len(widths) != 4 or any(w < 1 for w in widths):
            raise ValueError(f"widths must be 4 positive ints, got {widths}")
        if s_init < 2 or s_init % 2 != 0:
            raise ValueError(f"s_init must be a positive even integer, got {s_init}")
        self.nr = int(nr)
        self.nt = int(nt)
        self.s_init = int(s_init)
        self.widths = tuple(int(w) for w in widths)
        self.s_max = self.widths[1]
        gen = (rng or RngStream(0)).generator()
        w1, s_max, w2, w3 = self.widths
        self.convs = [
            _Conv3x3(2, w1, gen),
            _Conv3x3(w1, s_max, gen),
            _Conv3x3(s_max, w2, gen),
            _Conv3x3(w2, w3, gen),
            _Conv3x3(w3, 2, gen),
        ]
        self.dense = _Dense(self.s_init, 2 * s_max, gen)
        self._cache = None

    # -- parameter bookkeeping ------------------------------------------------

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter arrays in a stable, serialization-defining order."""
        params = []
        for i, conv in enumerate(self.convs, start=1):
            params.append((f"conv{i}.weight", conv.weight))
            params.append((f"conv{i}.bias", conv.bias))
        params.append(("dense.weight", self.dense.weight))
        params.append(("dense.bias", self.dense.bias))
        return params

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, current in self.parameters():
            new = np.asarray(values[name], dtype=np.float64)
            if new.shape != current.shape:
                raise ValueError(f"{name}: shape {new.shape} != {current.shape}")
            current[...] = new

    @property
    def num_params(self) -> int:
        return sum(p.size for _, p in self.parameters())

    # -- forward / backward ---------------------------------------------------

    def _check_input(self, x: np.ndarray, t) -> tuple[np.ndarray, np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != (2, self.nr, self.nt):
            raise ValueError(
                f"input must be (batch, 2, {self.nr}, {self.nt}), got {x.shape}"
            )
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        return x, t, single

    def _run(self, x: np.ndarray, t: np.ndarray, keep_cache: bool):
        cache = {"relu": [], "conv": []}
        emb = time_embedding(t, self.s_init)
        cond, dense_cache = self.dense.forward(emb)
        t_scale, t_bias = cond[:, : self.s_max], cond[:, self.s_max:]

        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1))  # to channels-last
        for i, conv in enumerate(self.convs):
            h, conv_cache = conv.forward(h)
            cache["conv"].append(conv_cache)
            if i == 1:  # widest features: apply the time conditioning
                cache["pre_film"] = h
                h = (1.0 + t_scale)[:, None, None, :] * h + t_bias[:, None, None, :]
            if i < len(self.convs) - 1:
                mask = h > 0.0
                cache["relu"].append(mask)
                h = h * mask
        if keep_cache:
            cache["dense"] = dense_cache
            cache["t_scale"] = t_scale
            self._cache = cache
        return h.transpose(0, 3, 1, 2)  # back to channels-first

    def forward(self, x: np.ndarray, t) -> np.ndarray:
        """Training-path forward pass; records activations for backward()."""
        x, t, single = self._check_input(x, t)
        y = self._run(x, t, keep_cache=True)
        self._cache["single"] = single
        return y[0] if single else y

    def predict(self, x: np.ndarray, t) -> np.ndarray:
        """Pure inference pass: no state is written, safe for concurrent use."""
        x, t, single = self._check_input(x, t)
        y = self._run(x, t, keep_cache=False)
        return y[0] if single else y

    def backward(self, grad_output: np.ndarray):
        """Exact reverse-mode gradients for the last :meth:`forward` call.

        Returns ``(grad_input, grads)`` where ``grads`` maps parameter names
        to arrays.  Raises if no forward state is available; the state is
        consumed.
        """
        if self._cache is None:
            raise RuntimeError("backward() called without a recorded forward pass")
        cache, self._cache = self._cache, None
        g = np.asarray(grad_output, dtype=np.float64)
        if g.ndim == 3:
            g = g[None]
        g = np.ascontiguousarray(g.transpose(0, 2, 3, 1))  # to channels-last
        grads: dict[str, np.ndarray] = {}

        relu_masks = cache["relu"]
        grad_cond = None
        for i in range(len(self.convs) - 1, -1, -1):
            if i < len(self.convs) - 1:
                g = g * relu_masks[i]
            if i == 1:
                # backprop through the FiLM conditioning
                pre = cache["pre_film"]
                t_scale = cache["t_scale"]
                grad_scale = np.sum(g * pre, axis=(1, 2))
                grad_bias = np.sum(g, axis=(1, 2))
                grad_cond = np.concatenate([grad_scale, grad_bias], axis=1)
                g = g * (1.0 + t_scale)[:, None, None, :]
            g, grad_w, grad_b = self.convs[i].backward(g, cache["conv"][i])
            grads[f"conv{i + 1}.weight"] = grad_w
            grads[f"conv{i + 1}.bias"] = grad_b

        _, grad_dw, grad_db = self.dense.backward(grad_cond, cache["dense"])
        grads["dense.weight"] = grad_dw
        grads["dense.bias"] = grad_db
        g = g.transpose(0, 3, 1, 2)  # back to channels-first
        if cache.get("single"):
            g = g[0]
        return g, grads


def denoiser_forward(net: DenoiserNetwork, x: np.ndarray, t) -> np.ndarray:
    """Functional wrapper over :meth:`DenoiserNetwork.forward`."""
    return net.forward(x, t)


def denoiser_backward(net: DenoiserNetwork, grad_output: np.ndarray):
    """Functional wrapper over :meth:`DenoiserNetwork.backward`."""
    return net.backward(grad_output)


class AdamOptimizer:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, net: DenoiserNetwork, learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p) for name, p in net.parameters()}
        self._v = {name: np.zeros_like(p) for name, p in net.parameters()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, param in self.net.parameters():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            param -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
