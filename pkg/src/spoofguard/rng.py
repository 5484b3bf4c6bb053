"""Seeded noise streams.

Each noise channel draws from its own Philox (counter-based) generator keyed
by ``(seed, channel)``, so adding draws on one channel never shifts another.
"""

from __future__ import annotations

import numpy as np

CHANNELS = ("process", "gps", "imu", "rssi")


def _factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # semidefinite: symmetric square root
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


class NoiseStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gens = {
            name: np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(i,))))
            for i, name in enumerate(CHANNELS)
        }
        self._factors: dict[tuple[str, bytes], np.ndarray] = {}

    def _L(self, channel: str, cov) -> np.ndarray:
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        key = (channel, cov.tobytes())
        L = self._factors.get(key)
        if L is None:
            L = self._factors[key] = _factor(cov)
        return L

    def gaussian(self, channel: str, cov) -> np.ndarray:
        L = self._L(channel, cov)
        return L @ self._gens[channel].standard_normal(L.shape[0])

    def gaussian_block(self, channel: str, cov, count: int) -> np.ndarray:
        """``count`` draws at once, shape ``(count, dim)``; same values as ``count`` calls to :meth:`gaussian`."""
        L = self._L(channel, cov)
        return self._gens[channel].standard_normal((count, L.shape[0])) @ L.T
