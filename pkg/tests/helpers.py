import numpy as np

from deployrl.envs import FiniteMDP


class QuadraticCritic:
    """``Q(s, a) = -(a - center)^2``, with the MLP forward/backward interface."""

    def __init__(self, center):
        self.center = center
        self.params = []

    def forward(self, X):
        X = np.atleast_2d(X)
        return -((X[:, -1:] - self.center) ** 2), X

    def backward(self, cache, d_out, input_only=False):
        d_in = np.zeros_like(cache)
        d_in[:, -1:] = d_out * -2.0 * (cache[:, -1:] - self.center)
        return (None if input_only else []), d_in

    def __call__(self, X):
        return self.forward(X)[0]


class Constant:
    def __init__(self, value):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))

    def act(self, state, rng=None):
        return self.value

    def predict(self, states):
        return np.tile(self.value, (len(np.atleast_2d(states)), 1))


def deterministic_mdp(gamma=0.9):
    """Two states, two actions, deterministic moves, no terminals."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = P[1, 0, 0] = P[1, 1, 1] = 1.0
    R = np.zeros((2, 2, 2))
    R[0, 0, 0], R[0, 1, 1], R[1, 0, 0], R[1, 1, 1] = 1.0, 0.0, 2.0, -1.0
    return FiniteMDP("det2", P, R, np.array([1.0, 0.0]), gamma, 20, np.array([False, False]))
