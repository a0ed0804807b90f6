"""Explicit ReLU / binary-step networks for products, quotients and unrolled WMMSE.

Every construction extracts binary digits of a quantity with a chain of
threshold units and big-M gated ReLU subtractions, then recombines the
digits. Affine pieces are never materialised as units; they are folded into
the pre-activation of whatever nonlinear unit consumes them, so the layer
count of a graph is the longest chain of nonlinear units plus the output
layer.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

INPUT = "Input"
RELU = "ReLU"
STEP = "BinaryStep"
AFFINE = "Affine"
OUTPUT = "Output"
KINDS = (INPUT, RELU, STEP, AFFINE, OUTPUT)
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Unit:
    kind: str
    sources: tuple = ()
    coeffs: tuple = ()
    bias: float = 0.0
    layer: int = 0


@dataclass
class UnitGraph:
    units: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for uid, unit in enumerate(self.units):
            if unit.kind not in KINDS:
                raise ValueError(f"unit {uid}: unknown kind {unit.kind!r}")
            if any(s >= uid or s < 0 for s in unit.sources):
                raise ValueError(f"unit {uid}: edges must point to earlier units")
        self.inputs = [i for i, u in enumerate(self.units) if u.kind == INPUT]
        self.outputs = [i for i, u in enumerate(self.units) if u.kind == OUTPUT]
        self.meta.update(self.counts())

    def plan(self) -> list:
        """Non-input units as ``(id, kind, sources, coeffs, bias)`` with array edges."""
        if getattr(self, "_plan", None) is None:
            self._plan = [(uid, u.kind, np.array(u.sources, dtype=np.intp), np.array(u.coeffs), u.bias)
                          for uid, u in enumerate(self.units) if u.kind != INPUT]
        return self._plan

    def counts(self) -> dict:
        kinds = [u.kind for u in self.units]
        return {
            "layers": max((u.layer for u in self.units), default=0),
            "relus": kinds.count(RELU),
            "binary_units": kinds.count(STEP),
            "units": len(self.units),
            "edges": sum(len(u.sources) for u in self.units),
        }


class Lin:
    """Affine combination ``const + sum(coeff * unit)`` over built units."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms or {})
        self.const = float(const)

    def __add__(self, other):
        if not isinstance(other, Lin):
            return Lin(self.terms, self.const + float(other))
        terms = dict(self.terms)
        for k, c in other.terms.items():
            terms[k] = terms.get(k, 0.0) + c
        return Lin(terms, self.const + other.const)

    __radd__ = __add__

    def __mul__(self, scale):
        scale = float(scale)
        return Lin({k: c * scale for k, c in self.terms.items()}, self.const * scale)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, Lin) else -float(other))

    def __rsub__(self, other):
        return -self + other


class GraphBuilder:
    def __init__(self):
        self.units = []

    def _add(self, kind, lin: Lin | None = None) -> Lin:
        lin = lin or Lin()
        sources = tuple(k for k, c in lin.terms.items() if c != 0.0)
        coeffs = tuple(lin.terms[k] for k in sources)
        layer = 0 if kind == INPUT else self.depth(lin) + 1
        self.units.append(Unit(kind, sources, coeffs, lin.const, layer))
        return Lin({len(self.units) - 1: 1.0})

    def depth(self, lin: Lin) -> int:
        return max((self.units[k].layer for k, c in lin.terms.items() if c != 0.0), default=0)

    def input(self) -> Lin:
        return self._add(INPUT)

    def relu(self, lin: Lin) -> Lin:
        return self._add(RELU, lin)

    def step(self, lin: Lin) -> Lin:
        return self._add(STEP, lin)

    def output(self, lin: Lin) -> Lin:
        return self._add(OUTPUT, lin)

    def build(self, meta=None) -> UnitGraph:
        return UnitGraph(list(self.units), dict(meta or {}))


# --- digit extraction primitives ------------------------------------------------

def int_bits(bound: float) -> int:
    """Index of the top binary digit needed for values up to ``bound`` (at least 0)."""
    if not bound > 0:
        raise ValueError("bounds must be positive")
    return max(0, math.ceil(math.log2(bound)))


@dataclass(frozen=True)
class BitExpansionSpec:
    m: int
    n: int
    big_M: float
    y_max: float = 1.0

    def __post_init__(self):
        if self.m < 0 or self.n < 1:
            raise ValueError("need m >= 0 and n >= 1")
        if self.big_M < 2 ** self.m * self.y_max:
            raise ValueError("big_M must be at least 2^m * y_max")

    @classmethod
    def for_bound(cls, bound, n, y_max=1.0) -> "BitExpansionSpec":
        m = int_bits(bound)
        return cls(m, int(n), 2.0 ** (m + 1) * y_max, y_max)

    @property
    def exponents(self) -> range:
        return range(self.m, -self.n - 1, -1)


@dataclass
class Bits:
    spec: BitExpansionSpec
    digits: list  # Lin per exponent, top digit first

    def value(self) -> Lin:
        return sum((2.0 ** i * d for i, d in zip(self.spec.exponents, self.digits)), Lin())


def expand(b: GraphBuilder, x: Lin, spec: BitExpansionSpec, y: Lin | None = None) -> Bits:
    """Binary digits of ``x / y`` (of ``x`` when ``y`` is None).

    The remainder after digit ``i`` is ``x - sum_j max(2^j y + M (d_j - 1), 0)``;
    the gate is zero whenever digit ``j`` is zero because ``M >= 2^m y_max``.
    """
    y = Lin(const=1.0) if y is None else y
    rem = x
    digits = []
    for i in spec.exponents:
        d = b.step(rem - 2.0 ** i * y)
        digits.append(d)
        if i > -spec.n:
            rem = rem - b.relu(2.0 ** i * y + spec.big_M * d - spec.big_M)
    return Bits(spec, digits)


def gated_product(b: GraphBuilder, bits: Bits, y: Lin, y_max: float) -> Lin:
    """``sum_i max(2^i y + C (d_i - 1), 0)`` = (truncated x) * y."""
    gate = 2.0 ** (bits.spec.m + 1) * y_max
    return sum((b.relu(2.0 ** i * y + gate * d - gate)
                for i, d in zip(bits.spec.exponents, bits.digits)), Lin())


def multiply(b, x: Lin, y: Lin, x_max, y_max, n) -> tuple[Lin, Bits]:
    bits = expand(b, x, BitExpansionSpec.for_bound(x_max, n))
    return gated_product(b, bits, y, y_max), bits


def divide(b, x: Lin, y: Lin, z_max, y_max, n) -> tuple[Lin, Bits]:
    bits = expand(b, x, BitExpansionSpec.for_bound(z_max, n, y_max), y)
    return bits.value(), bits


# --- standalone product and quotient networks -------------------------------------

def build_mul_net(x_max, y_max, n) -> UnitGraph:
    """Two-input network with ``|xy - out| <= y_max / 2^n`` on ``[0,x_max] x [0,y_max]``."""
    if not (x_max > 0 and y_max > 0):
        raise ValueError("x_max and y_max must be positive")
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    b = GraphBuilder()
    x, y = b.input(), b.input()
    prod, bits = multiply(b, x, y, x_max, y_max, n)
    b.output(prod)
    s = bits.spec
    return b.build({
        "op": "mul", "x_max": x_max, "y_max": y_max, "m": s.m, "n": s.n, "M": s.big_M,
        "gate": 2.0 ** (s.m + 1) * y_max, "bound": y_max / 2.0 ** s.n,
    })


def build_div_net(z_max, y_max, n) -> UnitGraph:
    """Two-input network with ``|x/y - out| <= 2^-n`` when ``x/y <= z_max``, ``0 < y <= y_max``."""
    if not (z_max > 0 and y_max > 0):
        raise ValueError("z_max and y_max must be positive")
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    b = GraphBuilder()
    x, y = b.input(), b.input()
    quot, bits = divide(b, x, y, z_max, y_max, n)
    b.output(quot)
    s = bits.spec
    return b.build({
        "op": "div", "z_max": z_max, "y_max": y_max, "m": s.m, "n": s.n, "M": s.big_M,
        "bound": 2.0 ** -s.n,
    })


def mul_net_counts(x_max, n) -> dict:
    m = int_bits(x_max)
    return {"layers": 2 * (m + n + 1) + 1, "binary_units": m + n + 1, "relus": 2 * (m + n) + 1}


def div_net_counts(z_max, n) -> dict:
    m = int_bits(z_max)
    return {"layers": 2 * (m + n + 1), "binary_units": m + n + 1, "relus": m + n}


def in_div_domain(x, y, z_max, y_max) -> np.ndarray:
    x, y = np.asarray(x), np.asarray(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (x >= 0) & (y > 0) & (y <= y_max) & (x <= z_max * y)


def in_mul_domain(x, y, x_max, y_max) -> np.ndarray:
    x, y = np.asarray(x), np.asarray(y)
    return (x >= 0) & (x <= x_max) & (y >= 0) & (y <= y_max)


# --- evaluation ---------------------------------------------------------------

def _activate(kind, pre):
    if kind == RELU:
        return max(pre, 0) if not isinstance(pre, np.ndarray) else np.maximum(pre, 0.0)
    if kind == STEP:
        return (1 if pre >= 0 else 0) if not isinstance(pre, np.ndarray) else (pre >= 0).astype(np.float64)
    return pre


def eval_unit_graph(g: UnitGraph, inputs, exact=False) -> np.ndarray:
    """Evaluate in topological order.

    ``inputs`` is one vector or a ``(batch, n_inputs)`` array. With
    ``exact=True`` a single input vector is evaluated in rational arithmetic
    and a list of :class:`~fractions.Fraction` is returned.
    """
    if exact:
        return _eval_exact(g, inputs)
    X = np.asarray(inputs, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != len(g.inputs):
        raise ValueError(f"graph takes {len(g.inputs)} inputs, got {X.shape[1]}")
    vals = np.empty((len(g.units), X.shape[0]))
    vals[g.inputs] = X.T
    for uid, kind, src, coeffs, bias in g.plan():
        pre = coeffs @ vals[src] + bias if len(src) else np.full(X.shape[0], bias)
        vals[uid] = _activate(kind, pre)
    out = vals[g.outputs].T
    return out[0] if single else out


def _eval_exact(g, inputs):
    xs = [Fraction(v) for v in np.asarray(inputs, dtype=np.float64).ravel()]
    if len(xs) != len(g.inputs):
        raise ValueError(f"graph takes {len(g.inputs)} inputs, got {len(xs)}")
    vals, it = [], iter(xs)
    for u in g.units:
        if u.kind == INPUT:
            vals.append(next(it))
            continue
        pre = Fraction(u.bias) + sum((Fraction(c) * vals[s] for s, c in zip(u.sources, u.coeffs)), Fraction(0))
        vals.append(_activate(u.kind, pre))
    return [Fraction(vals[i]) for i in g.outputs]


def reference_mul(x, y, x_max, y_max, n):
    """Straight-line digit recursion for the product network, no graph involved."""
    m = int_bits(x_max)
    rem, out = float(x), 0.0
    for i in range(m, -n - 1, -1):
        if rem >= 2.0 ** i:
            rem -= 2.0 ** i
            out += 2.0 ** i * y
    return out


def reference_div(x, y, z_max, n):
    m = int_bits(z_max)
    rem, out = float(x), 0.0
    for i in range(m, -n - 1, -1):
        if rem >= 2.0 ** i * y:
            rem -= 2.0 ** i * y
            out += 2.0 ** i
    return out


# --- error propagation -----------------------------------------------------------

def div_error_bound(eps1, eps2, y_min, z_max) -> float:
    """Worst-case quotient error when numerator/denominator are off by ``eps1``/``eps2``."""
    if not y_min > 0:
        raise ValueError("y_min must be positive")
    if eps1 < 0 or eps2 < 0 or z_max < 0:
        raise ValueError("errors and z_max must be nonnegative")
    return (z_max + 1.0) / y_min * max(eps1, eps2)


def mul_error_bound(eps1, eps2, x_max, y_max) -> float:
    if min(eps1, eps2, x_max, y_max) < 0:
        raise ValueError("arguments must be nonnegative")
    return 3.0 * max(x_max, y_max) * max(eps1, eps2)


@dataclass
class AdmissibleSet:
    """Bounds on channels, powers and weights for the unrolled WMMSE network.

    ``sigma`` is the noise standard deviation; the noise power is ``sigma**2``.
    """

    K: int = 2
    h_min: float = 0.5
    h_max: float = 2.0
    sigma: float = 1.0
    p_max: float = 1.0
    p_min: float = 1.0
    v_min: float = 0.1
    alpha_min: float = 1.0
    alpha_max: float = 1.0
    T: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if not self.v_min > 0:
            raise ValueError("v_min must be positive")
        if not 0 < self.p_min <= self.p_max:
            raise ValueError("need 0 < p_min <= p_max")
        if not (self.sigma > 0 and 0 < self.alpha_min <= self.alpha_max):
            raise ValueError("sigma and alpha bounds must be positive and ordered")

    @property
    def noise_power(self) -> float:
        return self.sigma ** 2


def wmmse_error_amplifier(adm: AdmissibleSet) -> float:
    """Per-iteration worst-case growth factor of the amplitude error."""
    K, hmin, hmax = adm.K, adm.h_min, adm.h_max
    s2 = adm.sigma ** 2
    P, Pmin = adm.p_max, adm.p_min
    amin, amax = adm.alpha_min, adm.alpha_max
    rP = math.sqrt(P)
    lead = (K * amin) ** 2 * s2 * hmin ** 8 * Pmin ** 2
    if lead <= 0:
        raise ValueError("degenerate admissible set")
    inner = (K - 1) * hmax ** 2 * P + s2
    outer = K * hmax ** 2 * P + s2
    first = K * amin * s2 * hmin ** 4 * Pmin + amax * hmax ** 2 * rP * inner * outer
    weight_sum = K * amax * inner * outer
    b_err = 12 * (s2 + hmax ** 2 * rP) / s2 ** 2 * (s2 ** 2 + hmax ** 2 * P) / s2 ** 4 \
        * (K - 1) * hmax ** 2 * rP + 1
    return first * weight_sum * hmax ** 2 * b_err / lead + 1.0


def plan_bits(adm: AdmissibleSet, T, eps) -> int:
    """Smallest ``n`` with ``n >= T log2 G + log2(1/eps)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return max(1, math.ceil(T * math.log2(wmmse_error_amplifier(adm)) + math.log2(1.0 / eps)))


def certified_bounds(adm: AdmissibleSet, T, n) -> dict:
    """Amplitude and power error bounds valid while iterates stay admissible."""
    G = wmmse_error_amplifier(adm)
    amp = G ** T * 2.0 ** -n
    rP = math.sqrt(adm.p_max)
    return {"G": G, "amplitude_bound": amp,
            "power_bound": mul_error_bound(amp, amp, rP, rP) + rP * 2.0 ** -n}


# --- unrolled WMMSE ---------------------------------------------------------------

@dataclass(frozen=True)
class _WmmseBounds:
    m_h: int
    m_v: int
    m_s: int
    m_a: int
    m_b: int
    m_r: int
    q_max: float
    a_max: float
    b_max: float
    i_max: float
    d_max: float
    den_max: float


def _wmmse_bounds(adm: AdmissibleSet, weights) -> _WmmseBounds:
    s2, P, K = adm.noise_power, adm.p_max, adm.K
    q = adm.h_max ** 2
    rP = math.sqrt(P)
    a_max = q * rP / s2
    b_max = q * P / s2 ** 2
    return _WmmseBounds(
        m_h=int_bits(adm.h_max), m_v=int_bits(rP), m_s=int_bits(P),
        m_a=int_bits(a_max), m_b=int_bits(b_max), m_r=int_bits(rP),
        q_max=q, a_max=a_max, b_max=b_max,
        i_max=(K - 1) * q * P + s2, d_max=K * q * P + s2,
        den_max=float(np.sum(weights)) * b_max * q,
    )


def build_wmmse_net(adm: AdmissibleSet, T, n_bits, weights=None, v0_input=False,
                    target_eps=None) -> UnitGraph:
    """Network mapping ``K*K`` channel magnitudes to approximate WMMSE powers after ``T`` steps.

    Inputs are the magnitudes in receiver-major order, followed by ``K``
    initial amplitudes when ``v0_input`` is set; otherwise the iteration
    starts from ``v0 = sqrt(p_max)``. Per iteration the network forms
    ``a_k = h_kk^2 v_k / (sum_{j!=k} h_kj^2 v_j^2 + s2)``,
    ``b_k = a_k v_k / (sum_j h_kj^2 v_j^2 + s2)`` and the projected update
    ``v_k = [alpha_k a_k / sum_j alpha_j b_j h_jk^2]`` from digit networks,
    reusing each quantity's digits wherever it multiplies several factors.
    """
    K, n, T = adm.K, int(n_bits), int(T)
    if T < 0 or n < 1:
        raise ValueError("need T >= 0 and n_bits >= 1")
    alpha = np.ones(K) if weights is None else np.asarray(weights, dtype=np.float64)
    if alpha.shape != (K,) or np.any(alpha < adm.alpha_min) or np.any(alpha > adm.alpha_max):
        raise ValueError("weights must have length K and respect the alpha bounds")
    bd = _wmmse_bounds(adm, alpha)
    s2, rP = adm.noise_power, math.sqrt(adm.p_max)

    b = GraphBuilder()
    h = [[b.input() for _ in range(K)] for _ in range(K)]
    v = [b.input() for _ in range(K)] if v0_input else [Lin(const=rP) for _ in range(K)]

    if T:
        q = [[multiply(b, h[k][j], h[k][j], adm.h_max, adm.h_max, n)[0] for j in range(K)]
             for k in range(K)]
    for _ in range(T):
        v_bits = [expand(b, v[k], BitExpansionSpec.for_bound(rP, n)) for k in range(K)]
        sq = [gated_product(b, v_bits[k], v[k], rP) for k in range(K)]
        sq_bits = [expand(b, sq[k], BitExpansionSpec.for_bound(adm.p_max, n)) for k in range(K)]
        rx = [[gated_product(b, sq_bits[j], q[k][j], bd.q_max) for j in range(K)] for k in range(K)]
        num_a = [gated_product(b, v_bits[k], q[k][k], bd.q_max) for k in range(K)]
        a_val, b_bits = [], []
        for k in range(K):
            interference = sum((rx[k][j] for j in range(K) if j != k), Lin()) + s2
            a_k, _ = divide(b, num_a[k], interference, bd.a_max, bd.i_max, n)
            a_val.append(a_k)
        for k in range(K):
            av = gated_product(b, v_bits[k], a_val[k], bd.a_max)
            total = sum((rx[k][j] for j in range(K)), Lin()) + s2
            _, bits = divide(b, av, total, bd.b_max, bd.d_max, n)
            b_bits.append(bits)
        new_v = []
        for k in range(K):
            den = sum((alpha[j] * gated_product(b, b_bits[j], q[j][k], bd.q_max) for j in range(K)), Lin())
            ratio, _ = divide(b, alpha[k] * a_val[k], den, rP, bd.den_max, n)
            lower = b.relu(ratio)
            new_v.append(rP - b.relu(rP - lower))
        v = new_v

    for k in range(K):
        bits = expand(b, v[k], BitExpansionSpec.for_bound(rP, n))
        b.output(gated_product(b, bits, v[k], rP))

    meta = {
        "op": "wmmse", "K": K, "T": T, "n": n, "v0_input": bool(v0_input),
        "admissible_set": asdict(adm), "weights": alpha.tolist(),
        "m": {"h": bd.m_h, "v": bd.m_v, "sq": bd.m_s, "a": bd.m_a, "b": bd.m_b, "ratio": bd.m_r},
        **certified_bounds(adm, T, n),
        "digit_budget": digit_budget(adm, T, n),
    }
    if target_eps is not None:
        needed = plan_bits(adm, T, target_eps)
        meta["planned_bits"] = needed
        if needed > n:
            meta["warning"] = f"n_bits={n} below the {needed} bits planned for eps={target_eps}"
    g = b.build(meta)
    g.meta["bit_count_ratio"] = g.meta["binary_units"] / max(1, g.meta["digit_budget"])
    return g


def digit_budget(adm: AdmissibleSet, T, n) -> int:
    """Digit budget ``T K (6 ceil(log 1/s) + 4 ceil(log Hmax) + (3K+4) ceil(log P / 2) + (2K+3)(n+1))``."""
    K = adm.K
    log_inv_sigma = math.ceil(math.log2(1.0 / adm.sigma))
    return T * K * (6 * max(0, log_inv_sigma) + 4 * max(0, math.ceil(math.log2(adm.h_max)))
                    + (3 * K + 4) * max(0, math.ceil(math.log2(adm.p_max) / 2))
                    + (2 * K + 3) * (n + 1))


def wmmse_net_counts(adm: AdmissibleSet, T, n_bits, v0_input=False) -> dict:
    """Closed-form unit and layer counts of :func:`build_wmmse_net`."""
    K, n, T = adm.K, int(n_bits), int(T)
    bd = _wmmse_bounds(adm, np.full(K, adm.alpha_min))

    def steps(m):
        return m + n + 1

    def chain(m):
        return m + n

    def last_digit(d_in, m):
        return d_in + 1 + 2 * (m + n)

    relus = binaries = 0
    d_q = 0
    if T:
        binaries += K * K * steps(bd.m_h)
        relus += K * K * (chain(bd.m_h) + steps(bd.m_h))
        d_q = last_digit(0, bd.m_h) + 1
    d_v = 0
    for _ in range(T):
        binaries += K * (steps(bd.m_v) + steps(bd.m_s) + steps(bd.m_a) + steps(bd.m_b) + steps(bd.m_r))
        relus += K * (chain(bd.m_v) + 3 * steps(bd.m_v) + chain(bd.m_s) + chain(bd.m_a)
                      + chain(bd.m_b) + chain(bd.m_r) + 2)
        relus += K * K * (steps(bd.m_s) + steps(bd.m_b))
        L_v = last_digit(d_v, bd.m_v)
        d_sq = L_v + 1
        L_s = last_digit(d_sq, bd.m_s)
        d_rx = max(L_s, d_q) + 1
        d_num = max(L_v, d_q) + 1
        d_int = d_rx if K > 1 else 0
        d_a = last_digit(max(d_num, d_int), bd.m_a)
        d_av = max(L_v, d_a) + 1
        d_b = last_digit(max(d_av, d_rx), bd.m_b)
        d_den = max(d_b, d_q) + 1
        d_ratio = last_digit(max(d_a, d_den), bd.m_r)
        d_v = d_ratio + 2
    binaries += K * steps(bd.m_v)
    relus += K * (chain(bd.m_v) + steps(bd.m_v))
    layers = last_digit(d_v, bd.m_v) + 2
    inputs = K * K + (K if v0_input else 0)
    return {"layers": layers, "relus": relus, "binary_units": binaries,
            "units": inputs + relus + binaries + K}


def sample_admissible_channels(adm: AdmissibleSet, count, seed=0, T=None, max_tries=100000):
    """Uniform draws in ``[h_min, h_max]^{K x K}`` whose first ``T`` WMMSE iterates keep ``sum v >= v_min``."""
    from .instance import ic_instance
    from .wmmse import wmmse_iterates

    T = adm.T if T is None else T
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(max_tries):
        H = rng.uniform(adm.h_min, adm.h_max, size=(adm.K, adm.K))
        inst = ic_instance(H, adm.noise_power, 1.0, adm.p_max)
        if all(v.sum() >= adm.v_min for v in wmmse_iterates(inst, T)):
            out.append(H)
            if len(out) == count:
                return np.array(out)
    raise RuntimeError("admissible set too restrictive to sample from")


# --- serialization -----------------------------------------------------------------

def save_graph(g: UnitGraph, path):
    lines = [f"# unit graph v{FORMAT_VERSION}", "@meta " + json.dumps(g.meta, sort_keys=True)]
    for uid, u in enumerate(g.units):
        edges = ",".join(f"{s}:{c!r}" for s, c in zip(u.sources, u.coeffs)) or "-"
        lines.append(f"{uid} {u.kind} {u.bias!r} {edges} {u.layer}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_graph(path) -> UnitGraph:
    units, meta = [], {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if raw.startswith("# unit graph v"):
            version = int(raw.rsplit("v", 1)[1])
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported graph format version {version}")
            continue
        if raw.startswith("@meta "):
            meta = json.loads(raw[6:])
            continue
        if not raw.strip():
            continue
        uid, kind, bias, edges, layer = raw.split()
        if int(uid) != len(units):
            raise ValueError(f"unit ids must be consecutive, found {uid}")
        pairs = [] if edges == "-" else [e.split(":") for e in edges.split(",")]
        units.append(Unit(kind, tuple(int(s) for s, _ in pairs), tuple(float(c) for _, c in pairs),
                          float(bias), int(layer)))
    return UnitGraph(units, meta)
