"""Differentiable layers with explicit forward/backward passes.

Every layer caches whatever its backward pass needs during forward and
exposes its trainable parameters as ``Param`` objects.  Data layout for the
convolutional stack is ``(batch, channels, frames, bins)``; recurrent and
fully connected layers work on ``(batch, frames, width)`` / ``(batch, width)``.
All math is plain numpy so the backward passes stay inspectable and checkable
against finite differences.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateBatch, ShapeError


class Param:
    """One trainable array plus its gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape})"


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    # Uniform fan-in scaling; biases are zero-initialised separately.
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base layer: forward caches state, backward consumes it."""

    name = "layer"

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def state_entries(self) -> list[tuple[str, np.ndarray]]:
        """Everything that belongs in a checkpoint: parameters plus aux stats."""
        return [(p.name, p.value) for p in self.params()]

    def describe(self) -> dict:
        return {"kind": type(self).__name__, "name": self.name}


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.01, name: str = "leaky_relu"):
        if not 0.0 < slope < 1.0:
            raise ValueError(f"slope must be in (0,1), got {slope}")
        self.slope = slope
        self.name = name
        self._mask = None

    def forward(self, x, train):
        # Subgradient at exactly 0 is taken as `slope`.
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, dy):
        return np.where(self._mask, dy, self.slope * dy)

    def describe(self):
        return {"kind": "LeakyReLU", "name": self.name, "slope": self.slope}


class Conv2d(Layer):
    """3x3 cross-correlation with same-padding, bias included.

    Weights are stored as (3, 3, c_in, c_out).  Small maps run as a single
    im2col GEMM; when the patch buffer would be large the layer falls back to
    nine shifted GEMMs over the padded input, trading speed for memory.
    """

    IM2COL_LIMIT = 32 * 1024 * 1024  # patch-buffer elements

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 dtype=np.float64, name: str = "conv"):
        self.c_in = c_in
        self.c_out = c_out
        self.name = name
        fan_in = 9 * c_in
        self.weight = Param(f"{name}.weight",
                            he_uniform(rng, (3, 3, c_in, c_out), fan_in, dtype))
        self.bias = Param(f"{name}.bias", np.zeros(c_out, dtype=dtype))
        self._xp = None  # padded input, NHWC
        self._cols = None  # im2col patches when that path is taken

    def params(self):
        return [self.weight, self.bias]

    def _pad_nhwc(self, x):
        n, _, t, f = x.shape
        xp = np.zeros((n, t + 2, f + 2, self.c_in), dtype=x.dtype)
        xp[:, 1:t + 1, 1:f + 1, :] = np.transpose(x, (0, 2, 3, 1))
        return xp

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(
                f"{self.name}: expected (N,{self.c_in},T,F), got {x.shape}")
        n, _, t, f = x.shape
        xp = self._pad_nhwc(x)
        self._xp = xp
        w = self.weight.value
        if n * t * f * 9 * self.c_in <= self.IM2COL_LIMIT:
            win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
            cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * t * f, 9 * self.c_in)
            self._cols = cols
            y = cols @ w.reshape(9 * self.c_in, self.c_out) + self.bias.value
            y = y.reshape(n, t, f, self.c_out)
        else:
            self._cols = None
            y = np.empty((n, t, f, self.c_out), dtype=x.dtype)
            y[...] = self.bias.value
            for dt in range(3):
                for df in range(3):
                    y += xp[:, dt:dt + t, df:df + f, :] @ w[dt, df]
        return np.ascontiguousarray(np.transpose(y, (0, 3, 1, 2)))

    def backward(self, dy):
        xp = self._xp
        n, tp2, fp2, _ = xp.shape
        t, f = tp2 - 2, fp2 - 2
        dy_nhwc = np.ascontiguousarray(np.transpose(dy, (0, 2, 3, 1)))
        self.bias.grad += dy_nhwc.sum(axis=(0, 1, 2))
        w = self.weight.value
        dxp = np.zeros_like(xp)
        if self._cols is not None:
            dy_mat = dy_nhwc.reshape(n * t * f, self.c_out)
            self.weight.grad += (self._cols.T @ dy_mat).reshape(w.shape)
            dcols = (dy_mat @ w.reshape(9 * self.c_in, self.c_out).T)
            dcols = dcols.reshape(n, t, f, 3, 3, self.c_in)
            for dt in range(3):
                for df in range(3):
                    dxp[:, dt:dt + t, df:df + f, :] += dcols[:, :, :, dt, df, :]
        else:
            for dt in range(3):
                for df in range(3):
                    self.weight.grad[dt, df] += np.tensordot(
                        xp[:, dt:dt + t, df:df + f, :], dy_nhwc,
                        axes=([0, 1, 2], [0, 1, 2]))
                    dxp[:, dt:dt + t, df:df + f, :] += dy_nhwc @ w[dt, df].T
        dx = np.transpose(dxp[:, 1:t + 1, 1:f + 1, :], (0, 3, 1, 2))
        return np.ascontiguousarray(dx)

    def describe(self):
        return {"kind": "Conv2d", "name": self.name,
                "c_in": self.c_in, "c_out": self.c_out}


class BatchNorm(Layer):
    """Per-channel batch normalisation over (batch, frames, bins).

    Train mode uses biased batch statistics and updates running statistics;
    eval mode normalises with the running statistics.  Train mode requires a
    batch of at least two items.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float64, name: str = "bn"):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.name = name
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state_entries(self):
        return [(self.gamma.name, self.gamma.value),
                (self.beta.name, self.beta.value),
                (f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    def _axes(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"{self.name}: expected {self.channels} channels, got {x.shape}")
        return tuple(i for i in range(x.ndim) if i != 1)

    def _bshape(self, ndim):
        return (1, self.channels) + (1,) * (ndim - 2)

    def forward(self, x, train):
        axes = self._axes(x)
        bs = self._bshape(x.ndim)
        if train:
            if x.shape[0] < 2:
                raise DegenerateBatch(
                    f"{self.name}: train mode needs batch size >= 2, got {x.shape[0]}")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mean
            self.running_var = (1.0 - m) * self.running_var + m * var
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean.reshape(bs)) * inv_std.reshape(bs)
            self._cache = ("train", xhat, inv_std, axes)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean.reshape(bs)) * inv_std.reshape(bs)
            self._cache = ("eval", xhat, inv_std, axes)
        return self.gamma.value.reshape(bs) * xhat + self.beta.value.reshape(bs)

    def backward(self, dy):
        mode, xhat, inv_std, axes = self._cache
        bs = self._bshape(dy.ndim)
        if mode == "eval":
            # Running stats are constants: the map is affine per channel.
            self.beta.grad += dy.sum(axis=axes)
            self.gamma.grad += (dy * xhat).sum(axis=axes)
            return dy * (self.gamma.value * inv_std).reshape(bs)
        m = dy.size // self.channels
        self.beta.grad += dy.sum(axis=axes)
        self.gamma.grad += (dy * xhat).sum(axis=axes)
        dxhat = dy * self.gamma.value.reshape(bs)
        # Standard batch-norm input gradient with biased variance.
        sum_dxhat = dxhat.sum(axis=axes).reshape(bs)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes).reshape(bs)
        dx = (inv_std.reshape(bs) / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx

    def describe(self):
        return {"kind": "BatchNorm", "name": self.name, "channels": self.channels,
                "eps": self.eps, "momentum": self.momentum}


class MaxPool2d(Layer):
    """Non-overlapping (pool_t x pool_f) max pooling on (N,C,T,F).

    Trailing rows/bins that do not fill a whole window are truncated; their
    gradient is zero.  Ties route the gradient to the first maximal element in
    row-major (time-offset, bin-offset) scan order.
    """

    def __init__(self, pool_t: int, pool_f: int, name: str = "pool"):
        self.pool_t = pool_t
        self.pool_f = pool_f
        self.name = name
        self._cache = None

    def forward(self, x, train):
        n, c, t, f = x.shape
        pt, pf = self.pool_t, self.pool_f
        if pt > t or pf > f:
            raise ShapeError(
                f"{self.name}: window {pt}x{pf} larger than input {t}x{f}")
        to, fo = t // pt, f // pf
        xt = x[:, :, :to * pt, :fo * pf]
        windows = xt.reshape(n, c, to, pt, fo, pf).transpose(0, 1, 2, 4, 3, 5)
        flat = windows.reshape(n, c, to, fo, pt * pf)
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return y

    def backward(self, dy):
        (n, c, t, f), idx = self._cache
        pt, pf = self.pool_t, self.pool_f
        to, fo = t // pt, f // pf
        flat = np.zeros((n, c, to, fo, pt * pf), dtype=dy.dtype)
        np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
        dxt = flat.reshape(n, c, to, fo, pt, pf).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros((n, c, t, f), dtype=dy.dtype)
        dx[:, :, :to * pt, :fo * pf] = dxt.reshape(n, c, to * pt, fo * pf)
        return dx

    def describe(self):
        return {"kind": "MaxPool2d", "name": self.name,
                "pool_t": self.pool_t, "pool_f": self.pool_f}


class GlobalMaxPool(Layer):
    """(N,C,T,F) -> (N,C) max over the whole map; first max wins ties."""

    def __init__(self, name: str = "gmp"):
        self.name = name
        self._cache = None

    def forward(self, x, train):
        n, c, t, f = x.shape
        flat = x.reshape(n, c, t * f)
        idx = flat.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        (n, c, t, f), idx = self._cache
        flat = np.zeros((n, c, t * f), dtype=dy.dtype)
        np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
        return flat.reshape(n, c, t, f)


class FrameFlatten(Layer):
    """(N,C,T,F) -> (N,T,C*F): one feature vector per frame, channel-major."""

    def __init__(self, name: str = "frames"):
        self.name = name
        self._shape = None

    def forward(self, x, train):
        n, c, t, f = x.shape
        self._shape = x.shape
        return np.ascontiguousarray(np.transpose(x, (0, 2, 1, 3))).reshape(n, t, c * f)

    def backward(self, dy):
        n, c, t, f = self._shape
        return np.ascontiguousarray(
            np.transpose(dy.reshape(n, t, c, f), (0, 2, 1, 3)))


class Linear(Layer):
    """y = x @ W + b on the last axis; leading axes are preserved."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float64, name: str = "fc"):
        self.n_in = n_in
        self.n_out = n_out
        self.name = name
        self.weight = Param(f"{name}.weight",
                            he_uniform(rng, (n_in, n_out), n_in, dtype))
        self.bias = Param(f"{name}.bias", np.zeros(n_out, dtype=dtype))
        self._x2d = None
        self._lead = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, train):
        if x.shape[-1] != self.n_in:
            raise ShapeError(
                f"{self.name}: expected width {self.n_in}, got {x.shape}")
        self._lead = x.shape[:-1]
        x2d = x.reshape(-1, self.n_in)
        self._x2d = x2d
        y = x2d @ self.weight.value + self.bias.value
        return y.reshape(*self._lead, self.n_out)

    def backward(self, dy):
        dy2d = dy.reshape(-1, self.n_out)
        self.weight.grad += self._x2d.T @ dy2d
        self.bias.grad += dy2d.sum(axis=0)
        dx = dy2d @ self.weight.value.T
        return dx.reshape(*self._lead, self.n_in)

    def describe(self):
        return {"kind": "Linear", "name": self.name,
                "n_in": self.n_in, "n_out": self.n_out}


class Grl(Layer):
    """Gradient reversal: identity forward, dy -> -lambda * dy backward."""

    def __init__(self, lam: float = 1.0, name: str = "grl"):
        if lam < 0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        self.lam = lam
        self.name = name

    def forward(self, x, train):
        return x

    def backward(self, dy):
        return -self.lam * dy

    def describe(self):
        return {"kind": "Grl", "name": self.name, "lam": self.lam}


def _sigmoid(x):
    # exp may overflow for very negative inputs; the limit value 0.0 is right
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


class GruDirection:
    """One direction of a GRU; gate order in the packed matrices is (z, r, n).

    Recurrence (reset applied to the previous state before the candidate):
        z_t = sigma(x_t W_z + h_{t-1} U_z + b_z)
        r_t = sigma(x_t W_r + h_{t-1} U_r + b_r)
        n_t = tanh (x_t W_n + (r_t * h_{t-1}) U_n + b_n)
        h_t = z_t * h_{t-1} + (1 - z_t) * n_t
    so the update gate z keeps the old state.
    """

    def __init__(self, n_in: int, units: int, rng: np.random.Generator,
                 dtype, name: str):
        self.n_in = n_in
        self.units = units
        self.name = name
        self.w = Param(f"{name}.w", he_uniform(rng, (n_in, 3 * units), n_in, dtype))
        self.u = Param(f"{name}.u", he_uniform(rng, (units, 3 * units), units, dtype))
        self.b = Param(f"{name}.b", np.zeros(3 * units, dtype=dtype))
        self._cache = None

    def params(self):
        return [self.w, self.u, self.b]

    def forward(self, xs):
        # xs: (N, T, n_in) in this direction's time order.
        n, t, _ = xs.shape
        u = self.units
        uv = self.u.value
        a = xs @ self.w.value + self.b.value  # (N, T, 3U)
        h = np.zeros((n, u), dtype=xs.dtype)
        hs = np.empty((n, t, u), dtype=xs.dtype)
        zs = np.empty_like(hs)
        rs = np.empty_like(hs)
        ns = np.empty_like(hs)
        hprev = np.empty_like(hs)
        for k in range(t):
            hprev[:, k] = h
            zr = _sigmoid(a[:, k, :2 * u] + h @ uv[:, :2 * u])
            z, r = zr[:, :u], zr[:, u:]
            nn_ = np.tanh(a[:, k, 2 * u:] + (r * h) @ uv[:, 2 * u:])
            h = z * h + (1.0 - z) * nn_
            zs[:, k], rs[:, k], ns[:, k], hs[:, k] = z, r, nn_, h
        self._cache = (xs, hprev, zs, rs, ns)
        return hs

    def backward(self, dhs):
        xs, hprev, zs, rs, ns = self._cache
        n, t, _ = xs.shape
        u = self.units
        wv, uv = self.w.value, self.u.value
        dxs = np.empty_like(xs)
        da = np.empty((n, t, 3 * u), dtype=xs.dtype)
        dh = np.zeros((n, u), dtype=xs.dtype)
        for k in range(t - 1, -1, -1):
            dh = dh + dhs[:, k]
            z, r, nn_, hp = zs[:, k], rs[:, k], ns[:, k], hprev[:, k]
            dz = dh * (hp - nn_)
            dn = dh * (1.0 - z)
            dh_prev = dh * z
            dn_pre = dn * (1.0 - nn_ * nn_)
            drh = dn_pre @ uv[:, 2 * u:].T
            self.u.grad[:, 2 * u:] += (r * hp).T @ dn_pre
            dr = drh * hp
            dh_prev = dh_prev + drh * r
            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)
            self.u.grad[:, :u] += hp.T @ dz_pre
            self.u.grad[:, u:2 * u] += hp.T @ dr_pre
            dh_prev = dh_prev + dz_pre @ uv[:, :u].T + dr_pre @ uv[:, u:2 * u].T
            da[:, k, :u] = dz_pre
            da[:, k, u:2 * u] = dr_pre
            da[:, k, 2 * u:] = dn_pre
            dh = dh_prev
        da2 = da.reshape(-1, 3 * u)
        xs2 = xs.reshape(-1, self.n_in)
        self.w.grad += xs2.T @ da2
        self.b.grad += da2.sum(axis=0)
        dxs[...] = (da2 @ wv.T).reshape(xs.shape)
        return dxs


class BiGru(Layer):
    """Bidirectional GRU; output per frame is concat(forward, backward)."""

    def __init__(self, n_in: int, units: int, rng: np.random.Generator,
                 dtype=np.float64, name: str = "bigru"):
        self.n_in = n_in
        self.units = units
        self.name = name
        self.fwd = GruDirection(n_in, units, rng, dtype, f"{name}.fwd")
        self.bwd = GruDirection(n_in, units, rng, dtype, f"{name}.bwd")

    def params(self):
        return self.fwd.params() + self.bwd.params()

    def forward(self, x, train):
        if x.ndim != 3 or x.shape[-1] != self.n_in:
            raise ShapeError(
                f"{self.name}: expected (N,T,{self.n_in}), got {x.shape}")
        hf = self.fwd.forward(x)
        hb = self.bwd.forward(x[:, ::-1])[:, ::-1]
        return np.concatenate([hf, hb], axis=-1)

    def backward(self, dy):
        u = self.units
        dxf = self.fwd.backward(np.ascontiguousarray(dy[:, :, :u]))
        dxb = self.bwd.backward(np.ascontiguousarray(dy[:, ::-1, u:]))[:, ::-1]
        return dxf + dxb

    def describe(self):
        return {"kind": "BiGru", "name": self.name,
                "n_in": self.n_in, "units": self.units}
