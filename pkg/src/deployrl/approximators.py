"""Q-tables, a small tanh MLP with hand-written backprop, Adam, and gradient checks.

Every model exposes ``params`` (a list of arrays updated in place),
``forward(X) -> (out, cache)`` and ``backward(cache, d_out) -> (grads, d_in)``.
Losses in :mod:`deployrl.losses` are built on that pair.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np


class NonFiniteError(FloatingPointError):
    """A loss or parameter became NaN/inf; ``batch_index`` locates the minibatch."""

    def __init__(self, message, batch_index=None):
        super().__init__(message if batch_index is None else f"{message} (minibatch {batch_index})")
        self.batch_index = batch_index


class TabularQ:
    """Dense ``(n_states, n_actions)`` table of action values."""

    kind = "tabular_q"

    def __init__(self, n_states: int, n_actions: int, values=None):
        if values is None:
            values = np.zeros((n_states, n_actions))
        values = np.array(values, dtype=float)
        if values.shape != (n_states, n_actions):
            raise ValueError(f"table shape {values.shape} != {(n_states, n_actions)}")
        self.n_states, self.n_actions = n_states, n_actions
        self.params = [values]

    @property
    def values(self) -> np.ndarray:
        return self.params[0]

    def _check(self, states):
        states = np.asarray(states)
        if states.ndim != 1 or not np.issubdtype(states.dtype, np.integer):
            raise ValueError("tabular inputs must be a 1-D array of integer states")
        if states.size and (states.min() < 0 or states.max() >= self.n_states):
            raise ValueError(f"state index out of range [0, {self.n_states})")
        return states

    def forward(self, states):
        states = self._check(np.atleast_1d(states))
        return self.values[states], states

    def backward(self, cache, d_out):
        grad = np.zeros_like(self.values)
        np.add.at(grad, cache, d_out)
        return [grad], None

    def __call__(self, states):
        return self.forward(states)[0]

    def copy(self):
        return copy.deepcopy(self)


def xavier_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MLP:
    """Fully connected network, tanh hidden layers, linear or tanh output.

    ``layer_sizes`` includes input and output widths, e.g. ``(4, 32, 32, 3)``.
    """

    kind = "mlp"

    def __init__(self, layer_sizes, rng=None, output_activation: str = "linear", params=None):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        if output_activation not in ("linear", "tanh"):
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.output_activation = output_activation
        if params is None:
            rng = np.random.default_rng(rng)
            params = []
            for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
                params += [xavier_uniform(n_in, n_out, rng), np.zeros(n_out)]
        self.params = [np.array(p, dtype=float) for p in params]
        for i, (n_in, n_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            if self.params[2 * i].shape != (n_in, n_out) or self.params[2 * i + 1].shape != (n_out,):
                raise ValueError(f"parameter shapes do not match layer {i} ({n_in}->{n_out})")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def forward(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"expected input width {self.layer_sizes[0]}, got {X.shape[1]}")
        activations = [X]
        h = X
        for i in range(self.n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            last = i == self.n_layers - 1
            h = z if last and self.output_activation == "linear" else np.tanh(z)
            activations.append(h)
        return h, activations

    def backward(self, cache, d_out, input_only: bool = False):
        """Parameter gradients and the gradient w.r.t. the input.

        ``input_only`` skips the parameter gradients (returned as ``None``).
        """
        activations = cache
        grads = None if input_only else [None] * len(self.params)
        delta = np.asarray(d_out, dtype=float).reshape(activations[-1].shape)
        for i in reversed(range(self.n_layers)):
            last = i == self.n_layers - 1
            if not (last and self.output_activation == "linear"):
                delta = delta * (1.0 - activations[i + 1] ** 2)
            if grads is not None:
                grads[2 * i] = activations[i].T @ delta
                grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.params[2 * i].T
        return grads, delta

    def __call__(self, X):
        return self.forward(X)[0]

    def copy(self):
        return copy.deepcopy(self)


class MlpQ(MLP):
    """MLP action-value function.

    Discrete critics map a state encoding to ``|A|`` outputs. With
    ``n_states`` set, integer states are one-hot encoded on the way in.
    Continuous critics take ``[state, action]`` and output one value.
    """

    kind = "mlp_q"

    def __init__(self, layer_sizes, rng=None, n_states=None, params=None):
        super().__init__(layer_sizes, rng, "linear", params)
        self.n_states = n_states
        if n_states is not None and self.layer_sizes[0] != n_states:
            raise ValueError("one-hot input width must equal n_states")

    def encode(self, states):
        if self.n_states is None:
            return np.atleast_2d(np.asarray(states, dtype=float))
        states = np.atleast_1d(np.asarray(states))
        if states.ndim != 1 or not np.issubdtype(states.dtype, np.integer):
            raise ValueError("discrete MlpQ inputs must be integer states")
        if states.size and (states.min() < 0 or states.max() >= self.n_states):
            raise ValueError(f"state index out of range [0, {self.n_states})")
        return np.eye(self.n_states)[states]

    def forward(self, X):
        return super().forward(self.encode(X))


class MlpActor(MLP):
    """Deterministic actor; tanh output rescaled into ``[low, high]``."""

    kind = "mlp_actor"

    def __init__(self, layer_sizes, rng=None, low: float = -1.0, high: float = 1.0, params=None):
        super().__init__(layer_sizes, rng, "tanh", params)
        self.low, self.high = float(low), float(high)

    @property
    def _half(self):
        return 0.5 * (self.high - self.low)

    def forward(self, X):
        out, cache = super().forward(X)
        return 0.5 * (self.high + self.low) + self._half * out, cache

    def backward(self, cache, d_out):
        return super().backward(cache, self._half * np.asarray(d_out, dtype=float))


class Adam:
    """Adaptive-moment optimiser with bias correction; updates parameters in place.

    Moments live in one flat vector, which keeps the per-step cost low for
    the many small arrays of these networks.
    """

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.shapes = [p.shape for p in params]
        self.bounds = np.cumsum([0] + [p.size for p in params])
        self.m = np.zeros(self.bounds[-1])
        self.v = np.zeros(self.bounds[-1])
        self.t = 0

    def step(self, params, grads):
        if len(grads) != len(params) or len(params) != len(self.shapes):
            raise ValueError("gradient list does not match parameters")
        for p, g, shape in zip(params, grads, self.shapes):
            if g.shape != shape or p.shape != shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        g = np.concatenate([x.ravel() for x in grads]) if len(grads) > 1 else grads[0].ravel()
        self.m += (1.0 - b1) * (g - self.m)
        self.v += (1.0 - b2) * (g * g - self.v)
        update = (self.lr / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)
        for p, lo, hi in zip(params, self.bounds[:-1], self.bounds[1:]):
            p -= update[lo:hi].reshape(p.shape)
        # any nan or inf entry makes the sum non-finite
        if not np.isfinite(sum(float(p.sum()) for p in params)):
            raise NonFiniteError("parameter became non-finite after optimiser step")
        return params


def grad(loss_closure, batch_index=None):
    """Evaluate ``loss_closure() -> (loss, grads)`` and reject non-finite losses."""
    loss, grads = loss_closure()
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}", batch_index)
    return loss, grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple  # (parameter index, flat coordinate)
    rel_errors: list
    passed: bool


def finite_diff_check(params, loss_closure, h: float = 1e-5, tol: float = 1e-4,
                      grads=None, floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients to central differences, coordinate by coordinate.

    ``loss_closure()`` returns ``(loss, grads)`` for the current ``params``.
    Relative error is ``|g - fd| / max(|g|, |fd|, floor)``; ``floor`` keeps
    coordinates whose true derivative is zero from dividing by roundoff.
    Pass ``grads`` to check a supplied gradient instead of the closure's own.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if grads is None:
        _, grads = loss_closure()
    rel_errors, worst, max_err = [], (0, 0), 0.0
    for i, p in enumerate(params):
        flat = p.reshape(-1)
        g = np.asarray(grads[i], dtype=float).reshape(-1)
        err = np.zeros(flat.size)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_closure()[0]
            flat[j] = orig - h
            down = loss_closure()[0]
            flat[j] = orig
            fd = (up - down) / (2 * h)
            err[j] = abs(g[j] - fd) / max(abs(g[j]), abs(fd), floor)
        rel_errors.append(err.reshape(p.shape))
        if err.size and err.max() > max_err:
            max_err, worst = float(err.max()), (i, int(err.argmax()))
    return GradCheckReport(max_err, worst, rel_errors, max_err < tol)
