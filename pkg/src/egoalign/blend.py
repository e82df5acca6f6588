"""Deployment-side temporal smoothing between consecutive action chunks."""

from __future__ import annotations

import numpy as np

from .episode import ACTION_DIM, DISCRETE_COLS
from .errors import EmptyChunk, InvalidK


def blend_chunks(old_remaining, new_chunk, k_executed: int) -> np.ndarray:
    """Merge a freshly inferred chunk with what is left of the previous one.

    The first ``k_executed`` actions of ``new_chunk`` were already overtaken
    by execution during inference and are dropped. Over the overlap
    ``m = min(len(old_remaining), len(new_chunk) - k_executed)`` the weights
    run linearly from all-old to all-new, ``w_new(i) = i / (m - 1)``.
    Continuous columns are mixed; bins and gripper bits take whichever chunk
    has weight >= 0.5 (the new one on a tie) so they stay legal commands.
    The rest of the new chunk follows unblended.
    """
    new = np.asarray(new_chunk, dtype=float).reshape(-1, ACTION_DIM)
    old = np.asarray(old_remaining, dtype=float).reshape(-1, ACTION_DIM)
    if len(new) == 0:
        raise EmptyChunk("new chunk is empty")
    if not isinstance(k_executed, (int, np.integer)) or not 0 <= k_executed < len(new):
        raise InvalidK(f"k_executed must be in [0, {len(new)}), got {k_executed!r}")

    new = new[k_executed:]
    m = min(len(old), len(new))
    out = new.copy()
    if m <= 1:
        return out

    w_new = np.arange(m) / (m - 1)
    w_old = 1.0 - w_new
    blended = w_old[:, None] * old[:m] + w_new[:, None] * new[:m]
    take_new = w_new >= 0.5
    disc = list(DISCRETE_COLS)
    blended[:, disc] = np.where(take_new[:, None], new[:m][:, disc], old[:m][:, disc])
    out[:m] = blended
    return out
