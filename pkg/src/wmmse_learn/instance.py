"""Problem instances for scalar power control over IC and IMAC networks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IC = "IC"
IMAC = "IMAC"


@dataclass(frozen=True)
class ProblemInstance:
    """One resource-allocation slot.

    ``gains`` holds channel magnitudes. For an IC it is ``K x K`` with
    ``gains[k, j] = |h_kj|`` (transmitter ``j`` to receiver ``k``). For an
    IMAC it is ``K x N`` with ``gains[k, b]`` the magnitude from user ``k``
    to base station ``b``; user ``k`` is served by cell ``k // (K / N)``.
    """

    kind: str
    gains: np.ndarray
    noise_power: np.ndarray
    weights: np.ndarray
    p_max: float = 1.0
    _home: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=np.float64)
        if self.kind not in (IC, IMAC):
            raise ValueError(f"unknown instance kind {self.kind!r}")
        if gains.ndim != 2:
            raise ValueError("gains must be a 2-D array")
        K = gains.shape[0]
        if self.kind == IC and gains.shape != (K, K):
            raise ValueError(f"IC gains must be square, got {gains.shape}")
        if self.kind == IMAC and K % gains.shape[1] != 0:
            raise ValueError("IMAC users must split evenly across cells")
        if not np.all(np.isfinite(gains)) or np.any(gains < 0):
            raise ValueError("gains must be finite and nonnegative")
        noise = np.broadcast_to(np.asarray(self.noise_power, dtype=np.float64), (K,)).copy()
        weights = np.broadcast_to(np.asarray(self.weights, dtype=np.float64), (K,)).copy()
        if np.any(noise <= 0):
            raise ValueError("noise powers must be positive")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "noise_power", noise)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "p_max", float(self.p_max))
        if self.kind == IMAC:
            home = np.arange(K) // (K // gains.shape[1])
        else:
            home = np.arange(K)
        object.__setattr__(self, "_home", home)

    @property
    def num_tx(self) -> int:
        return self.gains.shape[0]

    @property
    def num_rx(self) -> int:
        return self.gains.shape[1]

    @property
    def home_cell(self) -> np.ndarray:
        return self._home

    def channel_matrix(self) -> np.ndarray:
        """Effective ``K x K`` magnitudes, receiver-major.

        IMAC receivers are co-located at the serving base station, so entry
        ``(k, j)`` is the gain from user ``j`` to the BS serving user ``k``.
        """
        if self.kind == IC:
            return self.gains
        return self.gains[:, self._home].T

    def features(self) -> np.ndarray:
        return self.gains.ravel()


def ic_instance(gains, noise_power=1.0, weights=1.0, p_max=1.0) -> ProblemInstance:
    return ProblemInstance(IC, gains, noise_power, weights, p_max)


def effective_channels(kind: str, gains: np.ndarray, num_cells: int | None = None) -> np.ndarray:
    """Batched version of :meth:`ProblemInstance.channel_matrix`.

    ``gains`` is ``(n, K, K)`` for IC or ``(n, K, N)`` for IMAC.
    """
    gains = np.asarray(gains, dtype=np.float64)
    if kind == IC:
        return gains
    K, N = gains.shape[-2:]
    home = np.arange(K) // (K // N)
    return np.swapaxes(gains[..., home], -1, -2)
