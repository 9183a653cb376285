"""Layer vocabulary with hand-written forward and backward passes.

Every layer caches what its backward pass needs during ``forward``.
Parameters live in ``params``; ``backward`` fills ``grads`` with arrays of
the same shapes and returns the gradient with respect to the input.  Each
parameter belongs to one update group (``weights``, ``bn`` or ``fcmask``)
so training schedules can freeze groups independently.
"""

from __future__ import annotations

import numpy as np

from .._kernels import depthwise_backward, depthwise_forward
from ..dct import block_basis
from ..fcmask import coefmask, coefmask_grad
from ..masks import PruneMask
from ..tensor import check_macroblock, tile, untile


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.update_groups: dict[str, str] = {}
        self._cache = None

    def spec(self) -> dict:
        return {"type": self.kind, "name": self.name}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"layer {self.name!r}: backward called without a cached forward pass")
        return self._cache

    def out_shape(self, shape: tuple) -> tuple:
        return shape

    def zero_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Conv2d(Layer):
    """Zero-padded ("same") convolution with odd square kernels, stride and groups."""

    kind = "conv2d"

    def __init__(self, name, c_in, c_out, kernel=3, stride=1, groups=1, rng=None, dtype=np.float64):
        super().__init__(name)
        if kernel % 2 == 0:
            raise ValueError(f"layer {name!r}: kernel must be odd")
        if c_in % groups or c_out % groups:
            raise ValueError(f"layer {name!r}: groups must divide both channel counts")
        self.c_in, self.c_out, self.kernel, self.stride, self.groups = c_in, c_out, kernel, stride, groups
        fan_in = c_in // groups * kernel * kernel
        rng = rng or np.random.default_rng(0)
        w = rng.standard_normal((c_out, c_in // groups, kernel, kernel)) * np.sqrt(2.0 / fan_in)
        self.params["weight"] = w.astype(dtype)
        self.update_groups["weight"] = "weights"

    def spec(self):
        return {**super().spec(), "c_in": self.c_in, "c_out": self.c_out, "kernel": self.kernel,
                "stride": self.stride, "groups": self.groups}

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.c_in:
            raise ValueError(f"layer {self.name!r}: expected {self.c_in} channels, got {c}")
        return self.c_out, -(-h // self.stride), -(-w // self.stride)

    def _windows(self, xp, ho, wo):
        s = self.stride
        for i in range(self.kernel):
            for j in range(self.kernel):
                yield i, j, (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        _, ho, wo = self.out_shape((c, h, w))
        p = self.kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        wt = self.params["weight"]
        g = self.groups
        depthwise = self.c_in == self.c_out == g
        if depthwise:
            y = np.empty((n, self.c_out, ho, wo), dtype=x.dtype)
            depthwise_forward(xp, np.ascontiguousarray(wt[:, 0]).astype(x.dtype), self.stride, y)
            self._cache = (xp, x.shape)
            return y
        y = np.zeros((n, self.c_out, ho, wo), dtype=x.dtype)
        for i, j, sl in self._windows(xp, ho, wo):
            xs = xp[sl]
            if g == 1:
                y += np.einsum("oc,nchw->nohw", wt[:, :, i, j], xs, optimize=True)
            else:
                wg = wt[:, :, i, j].reshape(g, self.c_out // g, self.c_in // g)
                xg = xs.reshape(n, g, self.c_in // g, ho, wo)
                y += np.einsum("goc,ngchw->ngohw", wg, xg, optimize=True).reshape(y.shape)
        self._cache = (xp, x.shape)
        return y

    def backward(self, dy):
        xp, xshape = self._need_cache()
        n, c, h, w = xshape
        _, _, ho, wo = dy.shape
        p = self.kernel // 2
        wt = self.params["weight"]
        g = self.groups
        depthwise = self.c_in == self.c_out == g
        if depthwise:
            dxp = np.empty_like(xp)
            dw = np.empty((self.c_out, self.kernel, self.kernel), dtype=xp.dtype)
            depthwise_backward(xp, np.ascontiguousarray(wt[:, 0]).astype(xp.dtype),
                               np.ascontiguousarray(dy), self.stride, dxp, dw)
            self.grads["weight"] = dw[:, None].astype(wt.dtype)
            return dxp[:, :, p:p + h, p:p + w]
        dw = np.zeros_like(wt)
        dxp = np.zeros_like(xp)
        for i, j, sl in self._windows(xp, ho, wo):
            xs = xp[sl]
            if g == 1:
                dw[:, :, i, j] = np.einsum("nohw,nchw->oc", dy, xs, optimize=True)
                dxp[sl] += np.einsum("oc,nohw->nchw", wt[:, :, i, j], dy, optimize=True)
            else:
                cog, cig = self.c_out // g, self.c_in // g
                dyg = dy.reshape(n, g, cog, ho, wo)
                xg = xs.reshape(n, g, cig, ho, wo)
                wg = wt[:, :, i, j].reshape(g, cog, cig)
                dw[:, :, i, j] = np.einsum("ngohw,ngchw->goc", dyg, xg, optimize=True).reshape(self.c_out, cig)
                dxp[sl] += np.einsum("goc,ngohw->ngchw", wg, dyg, optimize=True).reshape(n, c, ho, wo)
        self.grads["weight"] = dw
        return dxp[:, :, p:p + h, p:p + w]


class PointwiseSpatial(Layer):
    """Plain 1x1 convolution, used where a layer is not frequency-wrapped."""

    kind = "pointwise"

    def __init__(self, name, c_in, c_out, rng=None, dtype=np.float64):
        super().__init__(name)
        self.c_in, self.c_out = c_in, c_out
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = (rng.standard_normal((c_out, c_in)) * np.sqrt(2.0 / c_in)).astype(dtype)
        self.update_groups["weight"] = "weights"

    def spec(self):
        return {**super().spec(), "c_in": self.c_in, "c_out": self.c_out}

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.c_in:
            raise ValueError(f"layer {self.name!r}: expected {self.c_in} channels, got {c}")
        return self.c_out, h, w

    def forward(self, x, train=False):
        self._cache = x
        return np.einsum("oc,nchw->nohw", self.params["weight"], x, optimize=True)

    def backward(self, dy):
        x = self._need_cache()
        self.grads["weight"] = np.einsum("nohw,nchw->oc", dy, x, optimize=True)
        return np.einsum("oc,nohw->nchw", self.params["weight"], dy, optimize=True)


class FreqPointwise(Layer):
    """1x1 convolution between a blockwise DCT and IDCT, with FCMasks on both sides.

    ``mode`` selects the coefficient masks: ``full`` (no masking), ``soft``
    (learned clamped-ramp masks from the FCMask vectors) or ``band`` (hard
    prefix masks fixed by :meth:`fix_bands`).
    """

    kind = "freq_pointwise"
    MODES = ("full", "soft", "band")

    def __init__(self, name, c_in, c_out, k, rng=None, dtype=np.float64):
        super().__init__(name)
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.q = k * k
        self.mode = "full"
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = (rng.standard_normal((c_out, c_in)) * np.sqrt(2.0 / c_in)).astype(dtype)
        self.params["fc_in"] = np.ones(c_in)
        self.params["fc_out"] = np.ones(c_out)
        self.update_groups.update(weight="weights", fc_in="fcmask", fc_out="fcmask")
        self.band_in = np.full(c_in, self.q, dtype=np.int64)
        self.band_out = np.full(c_out, self.q, dtype=np.int64)
        # hard non-prefix masks installed from a mask file; they override the bands in band mode
        self.hard_in: np.ndarray | None = None
        self.hard_out: np.ndarray | None = None
        self._basis = block_basis(k)

    def spec(self):
        return {**super().spec(), "c_in": self.c_in, "c_out": self.c_out, "k": self.k}

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.c_in:
            raise ValueError(f"layer {self.name!r}: expected {self.c_in} channels, got {c}")
        check_macroblock(h, w, self.k)
        return self.c_out, h, w

    def set_mode(self, mode: str) -> None:
        if mode not in self.MODES:
            raise ValueError(f"unknown mask mode {mode!r}; expected one of {self.MODES}")
        self.mode = mode

    def fix_bands(self) -> tuple[PruneMask, PruneMask]:
        """Round the current FCMasks to hard prefixes and switch to band mode."""
        from ..fcmask import round_and_fix

        self.band_in = round_and_fix(self.params["fc_in"], self.q)
        self.band_out = round_and_fix(self.params["fc_out"], self.q)
        self.hard_in = self.hard_out = None
        self.mode = "band"
        return self.band_masks()

    def band_masks(self) -> tuple[PruneMask, PruneMask]:
        """Hard masks in effect in band mode (chan-coef where a non-prefix mask is installed)."""
        mi = PruneMask.band(self.band_in, self.k) if self.hard_in is None else \
            PruneMask("chan-coef", self.c_in, self.k, self.hard_in)
        mo = PruneMask.band(self.band_out, self.k) if self.hard_out is None else \
            PruneMask("chan-coef", self.c_out, self.k, self.hard_out)
        return mi, mo

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        q = np.arange(self.q)
        if self.mode == "soft":
            return coefmask(self.params["fc_in"], self.q), coefmask(self.params["fc_out"], self.q)
        if self.mode == "band":
            m_in = self.hard_in if self.hard_in is not None else q[None, :] < self.band_in[:, None]
            m_out = self.hard_out if self.hard_out is not None else q[None, :] < self.band_out[:, None]
            return m_in.astype(np.float64), m_out.astype(np.float64)
        return np.ones((self.c_in, self.q)), np.ones((self.c_out, self.q))

    def to_coefs(self, x):
        n, c, h, w = x.shape
        t = tile(x, self.k).reshape(n, c, h // self.k, w // self.k, self.q)
        return t @ self._basis.T.astype(x.dtype)

    def from_coefs(self, f):
        n, c, bh, bw, _ = f.shape
        t = (f @ self._basis.astype(f.dtype)).reshape(n, c, bh, bw, self.k, self.k)
        return untile(t, self.k)

    def forward(self, x, train=False):
        self.out_shape(x.shape[1:])
        m_in, m_out = (m.astype(x.dtype) for m in self.masks())
        f = self.to_coefs(x)
        fm = f * m_in[None, :, None, None, :]
        g = np.einsum("oc,ncxyq->noxyq", self.params["weight"], fm, optimize=True)
        self._cache = (f, fm, g, m_in, m_out)
        return self.from_coefs(g * m_out[None, :, None, None, :])

    def backward(self, dy):
        f, fm, g, m_in, m_out = self._need_cache()
        w = self.params["weight"]
        dgm = self.to_coefs(dy)
        dg = dgm * m_out[None, :, None, None, :]
        self.grads["weight"] = np.einsum("noxyq,ncxyq->oc", dg, fm, optimize=True)
        dfm = np.einsum("oc,noxyq->ncxyq", w, dg, optimize=True)
        if self.mode == "soft":
            dm_out = np.einsum("noxyq,noxyq->oq", dgm, g, optimize=True)
            dm_in = np.einsum("ncxyq,ncxyq->cq", dfm, f, optimize=True)
            self.grads["fc_in"] = (dm_in * coefmask_grad(self.params["fc_in"], self.q)).sum(axis=1)
            self.grads["fc_out"] = (dm_out * coefmask_grad(self.params["fc_out"], self.q)).sum(axis=1)
        else:
            self.grads["fc_in"] = np.zeros(self.c_in)
            self.grads["fc_out"] = np.zeros(self.c_out)
        return self.from_coefs(dfm * m_in[None, :, None, None, :])

    def coefficients(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Input and (masked) output coefficients as ``(n, c, k*k, bh, bw)`` arrays."""
        m_in, m_out = (m.astype(x.dtype) for m in self.masks())
        f = self.to_coefs(x)
        g = np.einsum("oc,ncxyq->noxyq", self.params["weight"], f * m_in[None, :, None, None, :], optimize=True)
        g = g * m_out[None, :, None, None, :]
        return f.transpose(0, 1, 4, 2, 3), g.transpose(0, 1, 4, 2, 3)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return dy * self._need_cache()


class ReLU6(Layer):
    kind = "relu6"

    def forward(self, x, train=False):
        self._cache = (x > 0) & (x < 6)
        return np.clip(x, 0.0, 6.0)

    def backward(self, dy):
        return dy * self._need_cache()


class BatchNorm(Layer):
    """Per-channel batch normalization.

    In training mode an unfrozen layer normalizes with batch statistics and
    updates its running averages; a frozen layer always uses the running
    statistics and reports zero gradients for its scale and shift.
    """

    kind = "batchnorm"

    def __init__(self, name, c, momentum=0.1, eps=1e-5, dtype=np.float64):
        super().__init__(name)
        self.c, self.momentum, self.eps = c, momentum, eps
        self.frozen = False
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.update_groups.update(gamma="bn", beta="bn")
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def spec(self):
        return {**super().spec(), "c": self.c}

    def out_shape(self, shape):
        if shape[0] != self.c:
            raise ValueError(f"layer {self.name!r}: expected {self.c} channels, got {shape[0]}")
        return shape

    def forward(self, x, train=False):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train and not self.frozen:
            n = x.size // self.c
            mu = np.einsum("nchw->c", x) / n
            var = np.maximum(np.einsum("nchw,nchw->c", x, x) / n - mu * mu, 0.0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var * n / max(n - 1, 1)
            batch = True
        else:
            mu, var, batch = self.running_mean, self.running_var, False
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
        self._cache = (xhat, inv, batch)
        y = xhat * gamma[None, :, None, None]
        y += beta[None, :, None, None]
        return y

    def backward(self, dy):
        xhat, inv, batch = self._need_cache()
        gamma = self.params["gamma"]
        if self.frozen:
            self.grads["gamma"] = np.zeros_like(gamma)
            self.grads["beta"] = np.zeros_like(gamma)
        else:
            self.grads["gamma"] = np.einsum("nchw,nchw->c", dy, xhat, optimize=True)
            self.grads["beta"] = np.einsum("nchw->c", dy)
        dxhat = dy * gamma[None, :, None, None]
        if not batch:
            return dxhat * inv[None, :, None, None]
        m = dy.size // self.c
        s1 = np.einsum("nchw->c", dxhat)[None, :, None, None]
        s2 = np.einsum("nchw,nchw->c", dxhat, xhat)[None, :, None, None]
        dx = m * dxhat
        dx -= s1
        dx -= xhat * s2
        dx *= inv[None, :, None, None] / m
        return dx


class GlobalAvgPool(Layer):
    kind = "gap"

    def out_shape(self, shape):
        return (shape[0],)

    def forward(self, x, train=False):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        n, c, h, w = self._need_cache()
        return np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w)).copy()


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, c_in, c_out, rng=None, dtype=np.float64):
        super().__init__(name)
        self.c_in, self.c_out = c_in, c_out
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = (rng.standard_normal((c_out, c_in)) * np.sqrt(1.0 / c_in)).astype(dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)
        self.update_groups.update(weight="weights", bias="weights")

    def spec(self):
        return {**super().spec(), "c_in": self.c_in, "c_out": self.c_out}

    def out_shape(self, shape):
        if int(np.prod(shape)) != self.c_in:
            raise ValueError(f"layer {self.name!r}: expected {self.c_in} features, got {shape}")
        return (self.c_out,)

    def forward(self, x, train=False):
        x2 = x.reshape(x.shape[0], -1)
        self._cache = (x2, x.shape)
        return x2 @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy):
        x2, shape = self._need_cache()
        self.grads["weight"] = dy.T @ x2
        self.grads["bias"] = dy.sum(axis=0)
        return (dy @ self.params["weight"]).reshape(shape)


class SoftmaxCrossEntropy:
    """Mean cross-entropy over the batch, with its gradient w.r.t. the logits."""

    def __call__(self, logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        n = logits.shape[0]
        loss = -float(logp[np.arange(n), labels].mean())
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return loss, grad / n


LAYER_CLASSES = {cls.kind: cls for cls in (Conv2d, PointwiseSpatial, FreqPointwise, ReLU, ReLU6, BatchNorm,
                                           GlobalAvgPool, Dense)}


def build_layer(spec: dict, rng=None, dtype=np.float64) -> Layer:
    spec = dict(spec)
    kind = spec.pop("type")
    if kind not in LAYER_CLASSES:
        raise ValueError(f"unknown layer type {kind!r}")
    cls = LAYER_CLASSES[kind]
    name = spec.pop("name")
    if cls in (ReLU, ReLU6, GlobalAvgPool):
        return cls(name)
    if cls is BatchNorm:
        return cls(name, dtype=dtype, **spec)
    return cls(name, rng=rng, dtype=dtype, **spec)
