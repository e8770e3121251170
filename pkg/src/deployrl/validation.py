"""Input checks shared by the estimators."""

import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted


def check_dataset(dataset, discrete=None):
    """Reject empty datasets and datasets of the wrong action type."""
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    if discrete is True and not dataset.discrete:
        raise ValueError(
            f"{dataset.env_id!r} has continuous actions; use ConservativeActorCritic")
    if discrete is False and dataset.discrete:
        raise ValueError(
            f"{dataset.env_id!r} has discrete actions; use ConservativeQLearner")
    return dataset


def check_states(states, n_states=None, state_dim=None) -> np.ndarray:
    """Coerce a batch of states: integer indices (finite) or ``(n, d)`` vectors."""
    if n_states is not None:
        states = np.atleast_1d(np.asarray(states))
        if states.ndim != 1 or not np.issubdtype(states.dtype, np.integer):
            raise ValueError("expected a 1-D array of integer state indices")
        if states.size and (states.min() < 0 or states.max() >= n_states):
            raise ValueError(f"state index out of range [0, {n_states})")
        return states
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if state_dim is not None and states.shape[1] != state_dim:
        raise ValueError(f"expected states of width {state_dim}, got {states.shape[1]}")
    if not np.all(np.isfinite(states)):
        raise ValueError("states contain NaN or inf")
    return states


def check_batch_size(batch_size: int, n: int) -> int:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return min(batch_size, n)


__all__ = ["check_dataset", "check_states", "check_batch_size", "check_is_fitted", "NotFittedError"]
