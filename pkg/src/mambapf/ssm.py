"""State-space kernels: ZOH discretization, recurrent/convolutional scans,
the input-dependent (selective) scan, and the full Mamba block.

The parallel path is a portable work-efficient (Blelloch) associative scan
over (multiplier, addend) pairs; no device-specific code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError, ModeError, NumericError

Array = np.ndarray


# ----------------------------------------------------------------------
# time-invariant S4 kernels
# ----------------------------------------------------------------------

@dataclass
class SsmParams:
    """Continuous state-space parameters (diagonal A given as a 1-D array)."""

    A: Array
    B: Array
    C: Array
    delta: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64).reshape(-1)
        self.C = np.asarray(self.C, dtype=np.float64).reshape(-1)
        if np.ndim(self.delta) != 0:
            raise ModeError("discretize expects a fixed scalar delta; "
                            "per-step deltas belong to the selective path")
        self.delta = float(self.delta)
        if self.delta <= 0:
            raise InvalidInputError("delta must be positive")
        if not np.all(np.isfinite(self.A)):
            raise InvalidInputError("A must be finite")

    @property
    def N(self) -> int:
        return self.B.shape[0]

    @property
    def diagonal(self) -> bool:
        return self.A.ndim == 1


@dataclass
class DiscreteSsm:
    """ZOH-discretized parameters: A_bar = exp(dA), B_bar = (dA)^-1(e^dA - I)dB."""

    A_bar: Array
    B_bar: Array

    @property
    def diagonal(self) -> bool:
        return self.A_bar.ndim == 1


def _phi(x: Array) -> Array:
    """(exp(x) - 1) / x with a series fallback near zero."""
    out = np.empty_like(x)
    small = np.abs(x) < 1e-8
    out[~small] = np.expm1(x[~small]) / x[~small]
    xs = x[small]
    out[small] = 1.0 + xs / 2.0 + xs * xs / 6.0
    return out


def discretize(params: SsmParams) -> DiscreteSsm:
    """Zero-order-hold discretization.

    Diagonal A is handled elementwise; dense A goes through the augmented
    matrix exponential exp([[dA, dB], [0, 0]]), which stays valid when dA is
    singular.
    """
    d = params.delta
    if params.diagonal:
        x = d * params.A
        A_bar = np.exp(x)
        B_bar = d * _phi(x) * params.B
        return DiscreteSsm(A_bar=A_bar, B_bar=B_bar)
    n = params.N
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = d * params.A
    aug[:n, n] = d * params.B
    big = expm(aug)
    if not np.all(np.isfinite(big)):
        raise NumericError("matrix exponential produced non-finite values")
    return DiscreteSsm(A_bar=big[:n, :n], B_bar=big[:n, n])


def scan_recurrent(disc: DiscreteSsm, C: Array, x: Array,
                   h0: Array | None = None) -> Array:
    """h_t = A_bar h_{t-1} + B_bar x_t, y_t = C h_t, h_0 = 0 by default."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("input sequence must be nonempty")
    C = np.asarray(C, dtype=np.float64).reshape(-1)
    n = disc.B_bar.shape[0]
    h = np.zeros(n) if h0 is None else np.asarray(h0, dtype=np.float64).copy()
    y = np.empty_like(x)
    for t in range(x.shape[0]):
        if disc.diagonal:
            h = disc.A_bar * h + disc.B_bar * x[t]
        else:
            h = disc.A_bar @ h + disc.B_bar * x[t]
        y[t] = C @ h
    return y


def scan_convolutional(disc: DiscreteSsm, C: Array, x: Array) -> Array:
    """y = x * K_bar with K_bar = (C B_bar, C A_bar B_bar, ...), causal."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("input sequence must be nonempty")
    C = np.asarray(C, dtype=np.float64).reshape(-1)
    L = x.shape[0]
    kernel = np.empty(L)
    v = disc.B_bar.copy()
    for k in range(L):
        kernel[k] = C @ v
        v = disc.A_bar * v if disc.diagonal else disc.A_bar @ v
    return np.convolve(x, kernel)[:L]


# ----------------------------------------------------------------------
# associative scan over linear recurrences
# ----------------------------------------------------------------------

def sequential_linear_scan(a: Array, b: Array) -> Array:
    """Reference loop for h_t = a_t h_{t-1} + b_t with h_0 = 0."""
    h = np.zeros_like(b[0])
    out = np.empty_like(b)
    for t in range(a.shape[0]):
        h = a[t] * h + b[t]
        out[t] = h
    return out


def associative_linear_scan(a: Array, b: Array) -> Array:
    """Blelloch work-efficient scan computing h_t = a_t h_{t-1} + b_t, h_0 = 0.

    Elements are (multiplier, addend) pairs composed as
    (a2, b2) . (a1, b1) = (a2 a1, a2 b1 + b2); the up/down sweep runs
    vectorized over all trailing axes.
    """
    L = a.shape[0]
    if L == 0:
        raise InvalidInputError("scan input must be nonempty")
    P = 1 << max(0, (L - 1).bit_length())
    pad = P - L
    A = np.concatenate([a, np.ones((pad,) + a.shape[1:])], axis=0)
    B = np.concatenate([b, np.zeros((pad,) + b.shape[1:])], axis=0)
    a_in, b_in = A.copy(), B.copy()

    s = 1
    while s < P:
        left = slice(s - 1, P, 2 * s)
        right = slice(2 * s - 1, P, 2 * s)
        B[right] = A[right] * B[left] + B[right]
        A[right] = A[right] * A[left]
        s *= 2
    A[P - 1] = 1.0
    B[P - 1] = 0.0
    s = P // 2
    while s >= 1:
        left = slice(s - 1, P, 2 * s)
        right = slice(2 * s - 1, P, 2 * s)
        tA, tB = A[left].copy(), B[left].copy()
        A[left] = A[right]
        B[left] = B[right]
        B[right] = tA * B[right] + tB
        A[right] = tA * A[right]
        s //= 2
    # A/B now hold exclusive prefixes; fold in each element for the inclusive scan.
    inc = a_in * B + b_in
    return inc[:L]


# ----------------------------------------------------------------------
# selective scan
# ----------------------------------------------------------------------

def selective_scan_core(z: Array, delta: Array, A: Array, B: Array, C: Array,
                        mode: str = "associative") -> tuple[Array, Array]:
    """Input-dependent SSM recurrence, per channel.

    z: (L, E) inputs, delta: (L, E), A: (E, N) diagonal entries,
    B, C: (L, N). Returns (y, h) with y (L, E) and the state history
    h (L, E, N). B_bar uses the simplified Euler form delta_t * B_t.
    """
    if not np.all(np.isfinite(delta)):
        raise NumericError("non-finite delta in selective scan")
    abar = np.exp(delta[:, :, None] * A[None, :, :])
    binp = (delta * z)[:, :, None] * B[:, None, :]
    if mode == "sequential":
        h = sequential_linear_scan(abar, binp)
    elif mode == "associative":
        h = associative_linear_scan(abar, binp)
    else:
        raise ModeError(f"unknown scan mode {mode!r}")
    y = (h * C[:, None, :]).sum(axis=-1)
    return y, h


def ssm_scan(z: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor,
             mode: str = "associative") -> Tensor:
    """Differentiable selective scan with a hand-written reverse-scan backward."""
    zv, dv, Av, Bv, Cv = z.value, delta.value, A.value, B.value, C.value
    y, h = selective_scan_core(zv, dv, Av, Bv, Cv, mode=mode)
    L = zv.shape[0]
    abar = np.exp(dv[:, :, None] * Av[None, :, :])
    h_prev = np.concatenate([np.zeros_like(h[:1]), h[:-1]], axis=0)

    cache: dict = {}

    def _dh(gy: Array) -> Array:
        # The five vjps below share one reverse-scan result per upstream grad;
        # holding the gy reference keeps the cache hit exact.
        if cache.get("gy") is not gy:
            g = gy[:, :, None] * Cv[:, None, :]
            arev = np.concatenate([np.ones_like(abar[:1]), abar[:0:-1]], axis=0)
            brev = g[::-1]
            cache["gy"] = gy
            cache["dh"] = associative_linear_scan(arev, brev)[::-1]
        return cache["dh"]

    def vjp_z(gy):
        dh = _dh(gy)
        return (dh * dv[:, :, None] * Bv[:, None, :]).sum(axis=-1)

    def vjp_delta(gy):
        dh = _dh(gy)
        return ((dh * h_prev * Av[None] * abar).sum(axis=-1)
                + (dh * Bv[:, None, :] * zv[:, :, None]).sum(axis=-1))

    def vjp_A(gy):
        dh = _dh(gy)
        return (dh * h_prev * dv[:, :, None] * abar).sum(axis=0)

    def vjp_B(gy):
        dh = _dh(gy)
        return (dh * dv[:, :, None] * zv[:, :, None]).sum(axis=1)

    def vjp_C(gy):
        return (gy[:, :, None] * h).sum(axis=1)

    return Tensor(y, parents=(
        (z, vjp_z), (delta, vjp_delta), (A, vjp_A), (B, vjp_B), (C, vjp_C),
    ))


# ----------------------------------------------------------------------
# Mamba block
# ----------------------------------------------------------------------

@dataclass
class MambaBlockParams:
    """Weights for one Mamba block (expansion, conv, selective SSM, gate)."""

    ln_in_g: Tensor
    ln_in_b: Tensor
    w_in: Tensor        # (D, E) expansion projection
    conv: Tensor        # (E, W) causal depth-wise kernel
    w_dt: Tensor        # (E, E) delta projection
    b_dt: Tensor        # (E,)
    w_b: Tensor         # (E, N)
    w_c: Tensor         # (E, N)
    a_log: Tensor       # (E, N); A = -exp(a_log)
    w_gate: Tensor      # (D, E) gate branch projection
    ln_ssm_g: Tensor
    ln_ssm_b: Tensor
    w_out: Tensor       # (E, D) output projection

    @property
    def d_model(self) -> int:
        return self.w_in.value.shape[0]

    @property
    def d_inner(self) -> int:
        return self.w_in.value.shape[1]

    @property
    def state_dim(self) -> int:
        return self.w_b.value.shape[1]

    def named_tensors(self, prefix: str = ""):
        for name in ("ln_in_g", "ln_in_b", "w_in", "conv", "w_dt", "b_dt",
                     "w_b", "w_c", "a_log", "w_gate", "ln_ssm_g", "ln_ssm_b",
                     "w_out"):
            yield f"{prefix}{name}", getattr(self, name)


def init_mamba_block(rng: np.random.Generator, d_model: int, state_dim: int = 16,
                     expand: int = 2, conv_width: int = 4) -> MambaBlockParams:
    if expand < 1 or conv_width < 1:
        raise InvalidInputError("expand and conv_width must be >= 1")
    E = d_model * expand
    N = state_dim

    def lin(fan_in, shape):
        return ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape))

    conv = np.zeros((E, conv_width))
    conv[:, 0] = 1.0
    conv += rng.normal(0.0, 0.05, size=conv.shape)
    # A entries -1..-N (S4D-real style); dt bias centered near softplus^-1(0.1).
    a_log = np.tile(np.log(np.arange(1, N + 1, dtype=np.float64)), (E, 1))
    b_dt = np.full(E, np.log(np.expm1(0.1)))
    return MambaBlockParams(
        ln_in_g=ad.parameter(np.ones(d_model)),
        ln_in_b=ad.parameter(np.zeros(d_model)),
        w_in=lin(d_model, (d_model, E)),
        conv=ad.parameter(conv),
        w_dt=lin(E, (E, E)),
        b_dt=ad.parameter(b_dt),
        w_b=lin(E, (E, N)),
        w_c=lin(E, (E, N)),
        a_log=ad.parameter(a_log),
        w_gate=lin(d_model, (d_model, E)),
        ln_ssm_g=ad.parameter(np.ones(E)),
        ln_ssm_b=ad.parameter(np.zeros(E)),
        w_out=lin(E, (E, d_model)),
    )


def selective_scan(x_seq, params: MambaBlockParams,
                   mode: str = "associative") -> Tensor:
    """Project per-step delta/B/C from the input and run the SSM recurrence.

    ``x_seq`` is (L, E) at the block's inner width.
    """
    x = ad.as_tensor(x_seq)
    if x.value.shape[0] == 0:
        raise InvalidInputError("sequence must be nonempty")
    if x.value.shape[1] != params.d_inner:
        raise InvalidInputError(
            f"input width {x.value.shape[1]} does not match d_inner {params.d_inner}")
    delta = ad.softplus(x @ params.w_dt + params.b_dt)
    B = x @ params.w_b
    C = x @ params.w_c
    A = ad.neg(ad.exp(params.a_log))
    return ssm_scan(x, delta, A, B, C, mode=mode)


def mamba_block(x_seq, params: MambaBlockParams,
                mode: str = "associative") -> Tensor:
    """One Mamba block:

    x' = DWConv(MLP(LN(x)));  s = MLP(LN(SSM(silu(x'))) * silu(LN(x) W_gate));
    output = s + x.
    """
    x = ad.as_tensor(x_seq)
    if x.value.ndim != 2 or x.value.shape[1] != params.d_model:
        raise InvalidInputError(
            f"expected (L, {params.d_model}) input, got {x.value.shape}")
    if x.value.shape[0] == 0:
        raise InvalidInputError("sequence must be nonempty")
    ln_x = ad.layer_norm(x, params.ln_in_g, params.ln_in_b)
    u = ln_x @ params.w_in
    xp = ad.causal_dwconv(u, params.conv)
    z = ad.silu(xp)
    y = selective_scan(z, params, mode=mode)
    yln = ad.layer_norm(y, params.ln_ssm_g, params.ln_ssm_b)
    gate = ad.silu(ln_x @ params.w_gate)
    s = (yln * gate) @ params.w_out
    return s + x


def mamba_stack(x_seq, blocks: list[MambaBlockParams],
                mode: str = "associative") -> Tensor:
    out = ad.as_tensor(x_seq)
    for blk in blocks:
        out = mamba_block(out, blk, mode=mode)
    return out
