"""Minimal neural-network layers with analytic backpropagation.

Everything runs on float64 numpy so gradients can be validated against
central finite differences to tight tolerances. Layers follow a common
shape contract: convolutional stages work on (batch, channels, frames, bins)
tensors, recurrent/dense stages on (batch, frames, features).

Weight initialization is fan-in-scaled uniform, drawn from a caller-supplied
generator so a fixed seed reproduces parameters bit for bit.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Conv2d",
    "BatchNorm2d",
    "ReLU",
    "MaxPoolFreq",
    "FrameFlatten",
    "BiLSTM",
    "TimeDense",
    "Sigmoid",
    "Sequential",
]


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    """Base: parameter-free layer. ``params``/``grads`` map names to arrays
    that live for the network's lifetime, so the optimizer can hold state
    keyed by identity."""

    def params(self):
        return {}

    def grads(self):
        return {}

    def buffers(self):
        return {}

    def zero_grads(self):
        for g in self.grads().values():
            g[...] = 0.0


class Conv2d(Layer):
    """3x3 same-padded convolution over (frames, bins)."""

    def __init__(self, c_in, c_out, rng):
        self.c_in = c_in
        self.c_out = c_out
        fan_in = c_in * 9
        self.w = _uniform_init(rng, (c_out, c_in, 3, 3), fan_in)
        self.b = _uniform_init(rng, (c_out,), fan_in)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._xpad = None

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, train=False):
        b, c, t, f = x.shape
        xpad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        self._xpad = xpad
        out = np.zeros((b, self.c_out, t, f))
        for dt in range(3):
            for df in range(3):
                patch = xpad[:, :, dt : dt + t, df : df + f]
                out += np.einsum("oc,bctf->botf", self.w[:, :, dt, df], patch,
                                 optimize=True)
        return out + self.b[None, :, None, None]

    def backward(self, dy):
        xpad = self._xpad
        b, c, tp, fp = xpad.shape
        t, f = tp - 2, fp - 2
        dxpad = np.zeros_like(xpad)
        for dt in range(3):
            for df in range(3):
                patch = xpad[:, :, dt : dt + t, df : df + f]
                self.dw[:, :, dt, df] += np.einsum(
                    "botf,bctf->oc", dy, patch, optimize=True
                )
                dxpad[:, :, dt : dt + t, df : df + f] += np.einsum(
                    "oc,botf->bctf", self.w[:, :, dt, df], dy, optimize=True
                )
        self.db += dy.sum(axis=(0, 2, 3))
        return dxpad[:, :, 1:-1, 1:-1]


class BatchNorm2d(Layer):
    """Per-channel normalization over (batch, frames, bins).

    Training mode normalizes by batch statistics and refreshes the running
    averages (momentum 0.9); inference mode uses the running averages.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.dgamma = np.zeros(channels)
        self.dbeta = np.zeros(channels)
        self.run_mean = np.zeros(channels)
        self.run_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def buffers(self):
        return {"run_mean": self.run_mean, "run_var": self.run_var}

    def forward(self, x, train=False):
        axes = (0, 2, 3)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.run_mean[...] = self.momentum * self.run_mean + (1 - self.momentum) * mean
            self.run_var[...] = self.momentum * self.run_var + (1 - self.momentum) * var
        else:
            mean, var = self.run_mean, self.run_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self._cache = (xhat, inv, train)
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, dy):
        xhat, inv, train = self._cache
        axes = (0, 2, 3)
        self.dgamma += (dy * xhat).sum(axis=axes)
        self.dbeta += dy.sum(axis=axes)
        gscaled = dy * self.gamma[None, :, None, None]
        if not train:
            return gscaled * inv[None, :, None, None]
        n = dy.shape[0] * dy.shape[2] * dy.shape[3]
        mean_g = gscaled.mean(axis=axes)
        mean_gx = (gscaled * xhat).mean(axis=axes)
        return inv[None, :, None, None] * (
            gscaled - mean_g[None, :, None, None] - xhat * mean_gx[None, :, None, None]
        )


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class MaxPoolFreq(Layer):
    """Max pooling over the frequency axis only, window = stride = factor.
    Trailing bins that do not fill a window are dropped."""

    def __init__(self, factor):
        self.factor = factor

    def forward(self, x, train=False):
        b, c, t, f = x.shape
        k = self.factor
        f_out = f // k
        blocks = x[:, :, :, : f_out * k].reshape(b, c, t, f_out, k)
        self._argmax = blocks.argmax(axis=4)
        self._in_bins = f
        return blocks.max(axis=4)

    def backward(self, dy):
        b, c, t, f_out = dy.shape
        k = self.factor
        dblocks = np.zeros((b, c, t, f_out, k))
        np.put_along_axis(dblocks, self._argmax[..., None], dy[..., None], axis=4)
        dx = np.zeros((b, c, t, self._in_bins))
        dx[:, :, :, : f_out * k] = dblocks.reshape(b, c, t, f_out * k)
        return dx


class FrameFlatten(Layer):
    """(batch, channels, frames, bins) -> (batch, frames, channels * bins)."""

    def forward(self, x, train=False):
        self._shape = x.shape
        b, c, t, f = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, c * f)

    def backward(self, dy):
        b, c, t, f = self._shape
        return dy.reshape(b, t, c, f).transpose(0, 2, 1, 3)


class _LSTMDirection:
    """One direction of an LSTM layer; gate order (input, forget, cell, output)."""

    def __init__(self, d_in, hidden, rng):
        h = hidden
        self.w = _uniform_init(rng, (4 * h, d_in), d_in)
        self.u = _uniform_init(rng, (4 * h, h), h)
        self.b = _uniform_init(rng, (4 * h,), h)
        self.dw = np.zeros_like(self.w)
        self.du = np.zeros_like(self.u)
        self.db = np.zeros_like(self.b)
        self.hidden = h

    def forward(self, x):
        b, t, _ = x.shape
        h = self.hidden
        hs = np.zeros((b, t, h))
        cache = []
        h_prev = np.zeros((b, h))
        c_prev = np.zeros((b, h))
        for step in range(t):
            z = x[:, step] @ self.w.T + h_prev @ self.u.T + self.b
            i = _sigmoid(z[:, :h])
            f = _sigmoid(z[:, h : 2 * h])
            g = np.tanh(z[:, 2 * h : 3 * h])
            o = _sigmoid(z[:, 3 * h :])
            c = f * c_prev + i * g
            tanh_c = np.tanh(c)
            h_now = o * tanh_c
            hs[:, step] = h_now
            cache.append((x[:, step], h_prev, c_prev, i, f, g, o, tanh_c))
            h_prev, c_prev = h_now, c
        self._cache = cache
        return hs

    def backward(self, dhs):
        cache = self._cache
        b, t, h = dhs.shape
        dx = np.zeros((b, t, self.w.shape[1]))
        dh_next = np.zeros((b, h))
        dc_next = np.zeros((b, h))
        for step in range(t - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, g, o, tanh_c = cache[step]
            dh = dhs[:, step] + dh_next
            do = dh * tanh_c
            dc = dc_next + dh * o * (1.0 - tanh_c**2)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            dz = np.concatenate(
                [
                    di * i * (1 - i),
                    df * f * (1 - f),
                    dg * (1 - g**2),
                    do * o * (1 - o),
                ],
                axis=1,
            )
            self.dw += dz.T @ x_t
            self.du += dz.T @ h_prev
            self.db += dz.sum(axis=0)
            dx[:, step] = dz @ self.w
            dh_next = dz @ self.u
        return dx


class BiLSTM(Layer):
    """Bidirectional LSTM; output concatenates both directions per frame."""

    def __init__(self, d_in, hidden, rng):
        self.fwd = _LSTMDirection(d_in, hidden, rng)
        self.bwd = _LSTMDirection(d_in, hidden, rng)
        self.hidden = hidden

    def params(self):
        return {
            "w_fwd": self.fwd.w, "u_fwd": self.fwd.u, "b_fwd": self.fwd.b,
            "w_bwd": self.bwd.w, "u_bwd": self.bwd.u, "b_bwd": self.bwd.b,
        }

    def grads(self):
        return {
            "w_fwd": self.fwd.dw, "u_fwd": self.fwd.du, "b_fwd": self.fwd.db,
            "w_bwd": self.bwd.dw, "u_bwd": self.bwd.du, "b_bwd": self.bwd.db,
        }

    def forward(self, x, train=False):
        fwd = self.fwd.forward(x)
        bwd = self.bwd.forward(x[:, ::-1])[:, ::-1]
        return np.concatenate([fwd, bwd], axis=2)

    def backward(self, dy):
        h = self.hidden
        dx_f = self.fwd.backward(dy[:, :, :h])
        dx_b = self.bwd.backward(dy[:, ::-1, h:])[:, ::-1]
        return dx_f + dx_b


class TimeDense(Layer):
    """Affine map applied independently at every frame."""

    def __init__(self, d_in, d_out, rng):
        self.w = _uniform_init(rng, (d_out, d_in), d_in)
        self.b = _uniform_init(rng, (d_out,), d_in)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, train=False):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy):
        b, t, _ = dy.shape
        self.dw += np.einsum("bto,bti->oi", dy, self._x, optimize=True)
        self.db += dy.sum(axis=(0, 1))
        return dy @ self.w


class Sigmoid(Layer):
    def forward(self, x, train=False):
        self._y = _sigmoid(x)
        return self._y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class Sequential:
    def __init__(self, layers):
        self.layers = layers

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def named_params(self):
        out = {}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"{k}.{type(layer).__name__}.{name}"] = arr
        return out

    def named_grads(self):
        out = {}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.grads().items():
                out[f"{k}.{type(layer).__name__}.{name}"] = arr
        return out

    def named_buffers(self):
        out = {}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.buffers().items():
                out[f"{k}.{type(layer).__name__}.{name}"] = arr
        return out
