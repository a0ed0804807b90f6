"""Scalar WMMSE power control, sum-rate objective and baseline allocators.

All kernels work on a channel array ``H`` of shape ``(..., K, K)`` with
``H[..., k, j] = |h_kj|`` (receiver ``k``, transmitter ``j``), so the same
code serves one instance or a batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .instance import ProblemInstance

W_GUARD = 1e-12


class NumericalFailure(FloatingPointError):
    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass
class WmmseConfig:
    """Termination settings and initialization.

    ``init`` is ``"full"`` (``v0 = sqrt(p_max)``) or an explicit array of
    initial amplitudes.
    """

    obj_tol: float = 1e-5
    max_iter: int = 500
    init: object = "full"

    def __post_init__(self):
        if not self.obj_tol > 0:
            raise ValueError("obj_tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be at least 1")
        self.max_iter = int(self.max_iter)

    def describe(self) -> dict:
        init = self.init if isinstance(self.init, str) else "given"
        return {"obj_tol": self.obj_tol, "max_iter": self.max_iter, "init": init}


@dataclass
class WmmseState:
    v: np.ndarray
    u: np.ndarray
    w: np.ndarray
    iteration: int = 0
    objective: float = float("nan")


@dataclass
class WmmseResult:
    p: np.ndarray
    iterations: int | np.ndarray
    trace: list = field(default_factory=list)


def sum_rate_batch(H, p, noise_power, weights=1.0) -> np.ndarray:
    """Weighted sum-rate in bits for every leading index of ``H``."""
    H2 = np.square(H)
    p = np.asarray(p, dtype=np.float64)
    received = H2 * p[..., None, :]
    signal = np.diagonal(received, axis1=-2, axis2=-1)
    interference = received.sum(axis=-1) - signal + noise_power
    return (weights * np.log2(1.0 + signal / interference)).sum(axis=-1)


def sum_rate(inst: ProblemInstance, p) -> float:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (inst.num_tx,):
        raise ValueError(f"expected {inst.num_tx} powers, got shape {p.shape}")
    return float(sum_rate_batch(inst.channel_matrix(), p, inst.noise_power, inst.weights))


def mse_terms(H, v, u, noise_power) -> np.ndarray:
    """Per-user MSE ``e_k`` for the given amplitudes and receivers."""
    H2 = np.square(H)
    hd = np.diagonal(H, axis1=-2, axis2=-1)
    cross = (H2 * np.square(v)[..., None, :]).sum(axis=-1) - np.square(hd * v)
    return np.square(u * hd * v - 1.0) + np.square(u) * cross + noise_power * np.square(u)


def weighted_mse_batch(H, v, u, w, noise_power, weights) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("MSE weights must be positive")
    e = mse_terms(H, v, u, noise_power)
    return (weights * (w * e - np.log(w))).sum(axis=-1)


def weighted_mse_objective(inst: ProblemInstance, state: WmmseState) -> float:
    K = inst.num_tx
    for name in ("v", "u", "w"):
        if np.shape(getattr(state, name)) != (K,):
            raise ValueError(f"state.{name} must have length {K}")
    return float(
        weighted_mse_batch(
            inst.channel_matrix(), state.v, state.u, state.w, inst.noise_power, inst.weights
        )
    )


def update_u(H, v, noise_power):
    hd = np.diagonal(H, axis1=-2, axis2=-1)
    total = (np.square(H) * np.square(v)[..., None, :]).sum(axis=-1) + noise_power
    return hd * v / total


def update_w(H, v, u):
    hd = np.diagonal(H, axis1=-2, axis2=-1)
    return 1.0 / np.maximum(1.0 - u * hd * v, W_GUARD)


def update_v(H, u, w, weights, p_max):
    """Closed-form amplitude update projected onto ``[0, sqrt(p_max)]``.

    A zero denominator (every receiver scalar zero) maps to full amplitude.
    """
    hd = np.diagonal(H, axis1=-2, axis2=-1)
    num = weights * w * u * hd
    den = (np.square(H) * (weights * w * np.square(u))[..., :, None]).sum(axis=-2)
    vmax = np.sqrt(p_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
    return np.clip(raw, 0.0, vmax)


def _initial_v(init, shape, p_max):
    if isinstance(init, str):
        if init != "full":
            raise ValueError(f"unknown init {init!r}")
        return np.full(shape, np.sqrt(p_max))
    v0 = np.broadcast_to(np.asarray(init, dtype=np.float64), shape).copy()
    if np.any(v0 < 0) or np.any(v0 > np.sqrt(p_max) * (1 + 1e-12)):
        raise ValueError("initial amplitudes must lie in [0, sqrt(p_max)]")
    return v0


def wmmse_batch(H, noise_power, weights, p_max, config: WmmseConfig | None = None,
                return_trace=False):
    """Run WMMSE on ``n`` instances at once, stopping each one independently.

    ``H`` is ``(n, K, K)``; ``noise_power`` and ``weights`` broadcast to
    ``(n, K)``. Returns a :class:`WmmseResult` whose ``p`` is ``(n, K)`` and
    ``iterations`` is an integer array. With ``return_trace`` the trace is a
    list of per-sample objective lists.
    """
    cfg = config or WmmseConfig()
    H = np.asarray(H, dtype=np.float64)
    n, K = H.shape[0], H.shape[-1]
    noise = np.broadcast_to(np.asarray(noise_power, dtype=np.float64), (n, K))
    alpha = np.broadcast_to(np.asarray(weights, dtype=np.float64), (n, K))

    v = _initial_v(cfg.init, (n, K), p_max)
    u = update_u(H, v, noise)
    w = update_w(H, v, u)
    obj = weighted_mse_batch(H, v, u, w, noise, alpha)
    traces = [[float(o)] for o in obj] if return_trace else None
    iterations = np.zeros(n, dtype=np.int64)
    active = np.arange(n)

    t = 0
    while active.size:
        t += 1
        Ha, na, aa = H[active], noise[active], alpha[active]
        va = update_v(Ha, u[active], w[active], aa, p_max)
        ua = update_u(Ha, va, na)
        wa = update_w(Ha, va, ua)
        new_obj = weighted_mse_batch(Ha, va, ua, wa, na, aa)
        if not np.all(np.isfinite(new_obj)):
            raise NumericalFailure("non-finite WMMSE objective", t)
        v[active], u[active], w[active] = va, ua, wa
        iterations[active] = t
        if return_trace:
            for i, o in zip(active, new_obj):
                traces[i].append(float(o))
        done = (np.abs(new_obj - obj[active]) < cfg.obj_tol) | (t >= cfg.max_iter)
        obj[active] = new_obj
        active = active[~done]

    return WmmseResult(np.square(v), iterations, traces if return_trace else [])


def wmmse(inst: ProblemInstance, config: WmmseConfig | None = None) -> WmmseResult:
    """Solve one instance; ``trace`` lists the weighted-MSE objective per iteration."""
    cfg = config or WmmseConfig()
    res = wmmse_batch(
        inst.channel_matrix()[None], inst.noise_power[None], inst.weights[None],
        inst.p_max, cfg, return_trace=True,
    )
    return WmmseResult(res.p[0], int(res.iterations[0]), res.trace[0])


def wmmse_iterates(inst: ProblemInstance, T: int, v0=None) -> list[np.ndarray]:
    """Amplitudes ``v^0 .. v^T`` from exactly ``T`` updates, no early stop."""
    H = inst.channel_matrix()
    v = _initial_v("full" if v0 is None else v0, (inst.num_tx,), inst.p_max)
    u = update_u(H, v, inst.noise_power)
    w = update_w(H, v, u)
    out = [v]
    for _ in range(T):
        v = update_v(H, u, w, inst.weights, inst.p_max)
        u = update_u(H, v, inst.noise_power)
        w = update_w(H, v, u)
        out.append(v)
    return out


def allocate_max_power(inst: ProblemInstance) -> np.ndarray:
    return np.full(inst.num_tx, inst.p_max)


def allocate_random(inst: ProblemInstance, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, inst.p_max, size=inst.num_tx)
