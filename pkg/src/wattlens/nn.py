"""Minimal dense numeric kernel in float64 numpy.

A batched single-layer LSTM with hand-derived backpropagation through time,
a linear projection head, and an Adam optimizer. Gradients are exact for
this fixed architecture; there is no general autodiff. All functions are
pure: parameters and optimizer state are passed in and returned, never
mutated.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

from .errors import NonFiniteGradientError, ShapeMismatchError, StaleCacheError


def single_threaded_blas():
    """Scope BLAS to one thread.

    The training loop multiplies matrices far too small to gain from
    threading; on small machines the fork/join overhead dominates.
    """
    if threadpool_limits is None:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=1, user_api="blas")

# One gradient array per parameter array, keyed by parameter name.
GradientBundle = dict[str, np.ndarray]

LSTM_PARAM_NAMES = ("W_i", "W_f", "W_g", "W_o", "b_i", "b_f", "b_g", "b_o")
LINEAR_PARAM_NAMES = ("weight", "bias")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function via the tanh half-angle identity."""
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class LstmParams:
    """Gate weights and biases of one LSTM layer.

    Each weight matrix is (H, d_in + H) and acts on the concatenation
    [x_t; h_{t-1}]; each bias is (H,).
    """

    W_i: np.ndarray
    W_f: np.ndarray
    W_g: np.ndarray
    W_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        h, cols = self.W_i.shape
        for name in LSTM_PARAM_NAMES:
            a = getattr(self, name)
            want = (h, cols) if name.startswith("W") else (h,)
            if a.shape != want:
                raise ShapeMismatchError(f"{name} has shape {a.shape}, expected {want}")
            _check_finite(name, a)
        if cols <= h:
            raise ShapeMismatchError("weight columns must exceed hidden size")

    @property
    def hidden_size(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_i.shape[1] - self.W_i.shape[0]

    def as_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + name: getattr(self, name) for name in LSTM_PARAM_NAMES}


@dataclass(frozen=True)
class LinearParams:
    """Affine projection: out = weight @ h + bias, weight (E, H), bias (E,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatchError(
                f"weight {self.weight.shape} inconsistent with bias {self.bias.shape}"
            )
        _check_finite("weight", self.weight)
        _check_finite("bias", self.bias)

    @property
    def in_size(self) -> int:
        return self.weight.shape[1]

    @property
    def out_size(self) -> int:
        return self.weight.shape[0]

    def as_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + name: getattr(self, name) for name in LINEAR_PARAM_NAMES}


def init_lstm(input_size: int, hidden_size: int, rng: np.random.Generator) -> LstmParams:
    """Seeded uniform(-1/sqrt(H), 1/sqrt(H)) init; forget-gate bias pinned to +1."""
    bound = 1.0 / np.sqrt(hidden_size)
    cols = input_size + hidden_size

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return LstmParams(
        W_i=u(hidden_size, cols),
        W_f=u(hidden_size, cols),
        W_g=u(hidden_size, cols),
        W_o=u(hidden_size, cols),
        b_i=u(hidden_size),
        b_f=np.ones(hidden_size),
        b_g=u(hidden_size),
        b_o=u(hidden_size),
    )


def init_linear(in_size: int, out_size: int, rng: np.random.Generator) -> LinearParams:
    bound = 1.0 / np.sqrt(in_size)
    return LinearParams(
        weight=rng.uniform(-bound, bound, size=(out_size, in_size)),
        bias=rng.uniform(-bound, bound, size=out_size),
    )


@dataclass(frozen=True)
class LstmCache:
    """Intermediates saved by the forward pass for exact BPTT.

    Stored time-major, (T, B, ...), so each step's slice is contiguous.
    """

    x: np.ndarray  # (T, B, d)
    sig: np.ndarray  # (T, B, 3H), sigmoid gate activations in [i, f, o] order
    g: np.ndarray  # (T, B, H), tanh candidate activations
    c: np.ndarray  # cell states (T, B, H)
    tanh_c: np.ndarray  # (T, B, H)
    h: np.ndarray  # hidden states (T, B, H)


@dataclass(frozen=True)
class LstmRun:
    hidden: np.ndarray  # (B, T, H)
    cell: np.ndarray  # (B, T, H)
    last_hidden: np.ndarray  # (B, H)
    cache: LstmCache | None


def _as_batch(x: np.ndarray, input_size: int) -> np.ndarray:
    """Promote (T,), (T, d) or (B, T, d) input to (B, T, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[np.newaxis, :, np.newaxis]
    elif x.ndim == 2:
        x = x[np.newaxis, :, :]
    if x.ndim != 3 or x.shape[2] != input_size:
        raise ShapeMismatchError(
            f"input shape {x.shape} incompatible with input size {input_size}"
        )
    if x.shape[1] < 1:
        raise ShapeMismatchError("sequence length must be >= 1")
    return x


def _stacked_weights(params: LstmParams) -> tuple[np.ndarray, np.ndarray]:
    """Gate weights stacked in internal [i, f, o, g] order, split into the
    input part (4H, d) and the recurrent part (4H, H)."""
    w = np.concatenate([params.W_i, params.W_f, params.W_o, params.W_g], axis=0)
    d = params.input_size
    return w[:, :d], w[:, d:]


def lstm_forward(params: LstmParams, x: np.ndarray, want_cache: bool = False) -> LstmRun:
    """Run the LSTM recurrence over a batch of sequences.

    ``x`` may be (T,), (T, d) or (B, T, d); states start at zero. With
    ``want_cache`` the returned run carries everything needed for
    :func:`lstm_backward`.

    The step loop works on contiguous time-major buffers with ``out=`` so no
    step allocates; the input projections for all steps are hoisted into two
    matmuls, and sigmoid(v) = (1 + tanh(v/2)) / 2 is realized by folding the
    1/2 into the sigmoid-gate weights so the loop only calls tanh.
    """
    x = _as_batch(x, params.input_size)
    b, t, d = x.shape
    hsz = params.hidden_size
    wx, wh = _stacked_weights(params)
    wx_sig = 0.5 * wx[: 3 * hsz]
    wh_sig_t = np.ascontiguousarray(0.5 * wh[: 3 * hsz].T)
    b_sig = 0.5 * np.concatenate([params.b_i, params.b_f, params.b_o])
    wx_g = wx[3 * hsz :]
    wh_g_t = np.ascontiguousarray(wh[3 * hsz :].T)

    # Transposing x first is cheap (d is tiny); the projections then land
    # directly in time-major layout.
    x_tm = np.ascontiguousarray(x.transpose(1, 0, 2))
    x2 = x_tm.reshape(t * b, d)
    ax_sig = (x2 @ wx_sig.T).reshape(t, b, 3 * hsz)
    ax_sig += b_sig
    ax_g = (x2 @ wx_g.T).reshape(t, b, hsz)
    ax_g += params.b_g

    hidden = np.empty((t, b, hsz))
    cell = np.empty((t, b, hsz))
    sig_all = np.empty((t, b, 3 * hsz))
    g_all = np.empty((t, b, hsz))
    tc_all = np.empty((t, b, hsz))
    h = np.zeros((b, hsz))
    c = np.zeros((b, hsz))
    tmp = np.empty((b, hsz))

    for step in range(t):
        s = sig_all[step]
        np.matmul(h, wh_sig_t, out=s)
        s += ax_sig[step]
        np.tanh(s, out=s)
        s += 1.0
        s *= 0.5
        g = g_all[step]
        np.matmul(h, wh_g_t, out=g)
        g += ax_g[step]
        np.tanh(g, out=g)
        i = s[:, :hsz]
        f = s[:, hsz : 2 * hsz]
        o = s[:, 2 * hsz :]
        c_new = cell[step]
        np.multiply(f, c, out=c_new)
        np.multiply(i, g, out=tmp)
        c_new += tmp
        c = c_new
        tc = tc_all[step]
        np.tanh(c, out=tc)
        h = hidden[step]
        np.multiply(o, tc, out=h)

    cache = (
        LstmCache(x=x_tm, sig=sig_all, g=g_all, c=cell, tanh_c=tc_all, h=hidden)
        if want_cache
        else None
    )
    return LstmRun(
        hidden=hidden.transpose(1, 0, 2),
        cell=cell.transpose(1, 0, 2),
        last_hidden=hidden[t - 1],
        cache=cache,
    )


def lstm_backward(
    params: LstmParams, cache: LstmCache, d_last_hidden: np.ndarray
) -> tuple[GradientBundle, np.ndarray]:
    """Exact gradients of a scalar loss through the LSTM recurrence.

    ``d_last_hidden`` is dLoss/dh_T, shape (B, H). Parameter gradients are
    summed over the batch; the second return value is dLoss/dx, shape
    (B, T, d).
    """
    t, b, d = cache.x.shape
    hsz = params.hidden_size
    if cache.sig.shape != (t, b, 3 * hsz) or d != params.input_size:
        raise StaleCacheError(
            f"cache shapes x{cache.x.shape}, sig{cache.sig.shape} do not "
            f"match params with ({params.input_size}, {hsz})"
        )
    d_last_hidden = np.asarray(d_last_hidden, dtype=np.float64)
    if d_last_hidden.shape != (b, hsz):
        raise ShapeMismatchError(
            f"upstream gradient shape {d_last_hidden.shape}, expected {(b, hsz)}"
        )

    wx, wh = _stacked_weights(params)
    da_all = np.empty((t, b, 4 * hsz))

    # Everything without a sequential dependency is precomputed over all
    # steps; the loop then only chains dh/dc with allocation-free ufuncs on
    # contiguous time-major slices.
    dsig = cache.sig * (1.0 - cache.sig)
    dg1 = 1.0 - cache.g * cache.g
    o_dtc = (1.0 - cache.tanh_c * cache.tanh_c) * cache.sig[:, :, 2 * hsz :]

    dh = np.array(d_last_hidden)
    dc = np.zeros((b, hsz))
    tmp = np.empty((b, hsz))

    for step in reversed(range(t)):
        s = cache.sig[step]
        ds = dsig[step]
        da = da_all[step]

        np.multiply(dh, cache.tanh_c[step], out=tmp)
        np.multiply(tmp, ds[:, 2 * hsz :], out=da[:, 2 * hsz : 3 * hsz])
        np.multiply(dh, o_dtc[step], out=tmp)
        dc += tmp
        np.multiply(dc, cache.g[step], out=tmp)
        np.multiply(tmp, ds[:, :hsz], out=da[:, :hsz])
        if step > 0:
            np.multiply(dc, cache.c[step - 1], out=tmp)
            np.multiply(tmp, ds[:, hsz : 2 * hsz], out=da[:, hsz : 2 * hsz])
        else:
            da[:, hsz : 2 * hsz] = 0.0  # c_{-1} is zero
        np.multiply(dc, s[:, :hsz], out=tmp)
        np.multiply(tmp, dg1[step], out=da[:, 3 * hsz :])
        np.matmul(da, wh, out=dh)
        dc *= s[:, hsz : 2 * hsz]

    # Sum over batch and time in large matmuls against z_t = [x_t; h_{t-1}],
    # split into the x and h parts so nothing is copied (da_0's h-term drops
    # because h_{-1} = 0).
    daf = da_all.reshape(t * b, 4 * hsz)
    dw = np.empty((4 * hsz, d + hsz))
    dw[:, :d] = daf.T @ cache.x.reshape(t * b, d)
    if t > 1:
        dw[:, d:] = da_all[1:].reshape((t - 1) * b, 4 * hsz).T @ cache.h[:-1].reshape(
            (t - 1) * b, hsz
        )
    else:
        dw[:, d:] = 0.0
    db = daf.sum(axis=0)
    dx = (daf @ wx).reshape(t, b, d).transpose(1, 0, 2)

    grads: GradientBundle = {
        "W_i": dw[:hsz],
        "W_f": dw[hsz : 2 * hsz],
        "W_o": dw[2 * hsz : 3 * hsz],
        "W_g": dw[3 * hsz :],
        "b_i": db[:hsz],
        "b_f": db[hsz : 2 * hsz],
        "b_o": db[2 * hsz : 3 * hsz],
        "b_g": db[3 * hsz :],
    }
    return grads, dx


def linear_forward(params: LinearParams, h: np.ndarray) -> np.ndarray:
    """Affine map; accepts (H,) or (B, H)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.in_size:
        raise ShapeMismatchError(f"input size {h.shape[-1]} != {params.in_size}")
    return h @ params.weight.T + params.bias


def linear_backward(
    params: LinearParams, h: np.ndarray, d_out: np.ndarray
) -> tuple[GradientBundle, np.ndarray]:
    """Gradients of the affine map; parameter grads summed over the batch."""
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    d_out = np.atleast_2d(np.asarray(d_out, dtype=np.float64))
    if h.shape[0] != d_out.shape[0] or d_out.shape[1] != params.out_size:
        raise ShapeMismatchError(
            f"h {h.shape} and d_out {d_out.shape} inconsistent with weight {params.weight.shape}"
        )
    grads: GradientBundle = {"weight": d_out.T @ h, "bias": d_out.sum(axis=0)}
    return grads, d_out @ params.weight


@dataclass(frozen=True)
class AdamState:
    """First/second-moment accumulators plus the step counter."""

    m: GradientBundle
    v: GradientBundle
    t: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("step counter must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0 and self.eps > 0.0):
            raise ValueError("betas must be in (0, 1) and eps > 0")


def adam_init(
    params: dict[str, np.ndarray],
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return AdamState(
        m=zeros, v={k: np.zeros_like(v) for k, v in params.items()},
        t=0, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: GradientBundle,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction.

    Returns fresh parameter and state dicts; inputs are left untouched.
    """
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    if set(grads) != set(params):
        raise ShapeMismatchError(
            f"gradient keys {sorted(grads)} != parameter keys {sorted(params)}"
        )
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeMismatchError(f"gradient {k} shape {g.shape} != {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"gradient {k} is not finite")

    t = state.t + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_params = {}
    new_m = {}
    new_v = {}
    for k, g in grads.items():
        m = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        new_m[k] = m
        new_v[k] = v
        new_params[k] = params[k] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    new_state = AdamState(
        m=new_m, v=new_v, t=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return new_params, new_state


def lstm_from_dict(d: dict[str, np.ndarray], prefix: str = "") -> LstmParams:
    return LstmParams(**{name: d[prefix + name] for name in LSTM_PARAM_NAMES})


def linear_from_dict(d: dict[str, np.ndarray], prefix: str = "") -> LinearParams:
    return LinearParams(**{name: d[prefix + name] for name in LINEAR_PARAM_NAMES})
