"""Dense-network substrate with hand-rolled reverse-mode gradients.

Everything runs on float64 numpy arrays. The zoo is intentionally small:
affine layers with swish or identity activations, plus a Gaussian output
head whose variance is produced by softplus and then kept inside fixed
bounds by smoothly squashing the log-variance. Gradients are computed
layer by layer for this fixed composite; there is no general tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VAR_MIN = 1e-8
VAR_MAX = 1e4
LOG_VAR_MIN = float(np.log(VAR_MIN))
LOG_VAR_MAX = float(np.log(VAR_MAX))
HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))

ACTIVATIONS = ("swish", "identity")


class ShapeError(ValueError):
    """Input width does not match the layer or network it was fed to."""


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    t = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))


def swish(x):
    """x * sigmoid(x), elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def swish_grad(x):
    s = sigmoid(x)
    return s * (1.0 + np.asarray(x, dtype=np.float64) * (1.0 - s))


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    t = np.log1p(np.exp(-np.abs(x)))
    return np.where(x > 0.0, x + t, t)


def log_softplus(x):
    # log(softplus(x)); for very negative x, softplus(x) ~ exp(x) so the log is x.
    x = np.asarray(x, dtype=np.float64)
    sp = softplus(x)
    return np.where(x < -33.0, x, np.log(np.maximum(sp, 1e-300)))


def log_softplus_grad(x):
    x = np.asarray(x, dtype=np.float64)
    sp = softplus(x)
    return np.where(x < -33.0, 1.0, sigmoid(x) / np.maximum(sp, 1e-300))


def bound_log_var(lv):
    """Squash a raw log-variance into [LOG_VAR_MIN, LOG_VAR_MAX].

    Two softplus hinges keep the map smooth and monotone; the final clip
    only trims the ~1e-12 overshoot the hinges leave at the far ends.
    """
    lo = LOG_VAR_MIN + softplus(lv - LOG_VAR_MIN)
    hi = LOG_VAR_MAX - softplus(LOG_VAR_MAX - lo)
    return np.clip(hi, LOG_VAR_MIN, LOG_VAR_MAX)


def bound_log_var_grad(lv):
    lo = LOG_VAR_MIN + softplus(lv - LOG_VAR_MIN)
    hi = LOG_VAR_MAX - softplus(LOG_VAR_MAX - lo)
    g = sigmoid(LOG_VAR_MAX - lo) * sigmoid(lv - LOG_VAR_MIN)
    inside = (hi > LOG_VAR_MIN) & (hi < LOG_VAR_MAX)
    return np.where(inside, g, 0.0)


@dataclass
class DenseLayer:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("layer weight/bias shapes are inconsistent")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def init_layer(rng: np.random.Generator, in_dim: int, out_dim: int,
               activation: str = "identity") -> DenseLayer:
    # Uniform [-1/sqrt(in), 1/sqrt(in)] weights, zero bias.
    limit = 1.0 / np.sqrt(max(1, in_dim))
    w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    b = np.zeros(out_dim)
    return DenseLayer(w, b, activation)


@dataclass
class DenseNet:
    layers: list[DenseLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def forward_cached(self, x: np.ndarray):
        x = _as_batch(x, self.in_dim)
        cache = []
        h = x
        for layer in self.layers:
            pre = h @ layer.weight.T + layer.bias
            cache.append((h, pre))
            h = swish(pre) if layer.activation == "swish" else pre
        return h, cache

    def forward(self, x: np.ndarray) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        y, _ = self.forward_cached(x)
        return y[0] if single else y

    def backward(self, cache, d_out: np.ndarray):
        """Backprop d(loss)/d(output) through the net.

        Returns (grads, d_in) where grads matches parameters() order.
        """
        grads = [None] * (2 * len(self.layers))
        d = d_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            inp, pre = cache[i]
            if layer.activation == "swish":
                d = d * swish_grad(pre)
            grads[2 * i] = d.T @ inp
            grads[2 * i + 1] = d.sum(axis=0)
            d = d @ layer.weight
        return grads, d


def init_dense(rng: np.random.Generator, sizes: list[int],
               activations: list[str]) -> DenseNet:
    if len(activations) != len(sizes) - 1:
        raise ShapeError("need one activation per layer")
    layers = [init_layer(rng, sizes[i], sizes[i + 1], activations[i])
              for i in range(len(sizes) - 1)]
    return DenseNet(layers)


def _as_batch(x: np.ndarray, width: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"expected input width {width}, got shape {x.shape}")
    return x


@dataclass
class GaussianHead:
    """Linear mean layer plus a linear raw-variance layer.

    variance = exp(bound_log_var(log(softplus(raw)))), which stays inside
    [VAR_MIN, VAR_MAX] for any input.
    """

    mean_layer: DenseLayer
    var_layer: DenseLayer

    @property
    def in_dim(self) -> int:
        return self.mean_layer.in_dim

    @property
    def out_dim(self) -> int:
        return self.mean_layer.out_dim

    def parameters(self) -> list[np.ndarray]:
        return [self.mean_layer.weight, self.mean_layer.bias,
                self.var_layer.weight, self.var_layer.bias]

    def forward_cached(self, f: np.ndarray):
        f = _as_batch(f, self.in_dim)
        mean = f @ self.mean_layer.weight.T + self.mean_layer.bias
        raw = f @ self.var_layer.weight.T + self.var_layer.bias
        log_var = bound_log_var(log_softplus(raw))
        return mean, log_var, (f, raw)

    def forward(self, f: np.ndarray):
        single = np.asarray(f).ndim == 1
        mean, log_var, _ = self.forward_cached(f)
        if single:
            return mean[0], np.exp(log_var[0])
        return mean, np.exp(log_var)

    def backward(self, cache, d_mean: np.ndarray, d_log_var: np.ndarray):
        f, raw = cache
        d_raw = d_log_var * bound_log_var_grad(log_softplus(raw)) * log_softplus_grad(raw)
        grads = [d_mean.T @ f, d_mean.sum(axis=0),
                 d_raw.T @ f, d_raw.sum(axis=0)]
        d_f = d_mean @ self.mean_layer.weight + d_raw @ self.var_layer.weight
        return grads, d_f


def init_gaussian_head(rng: np.random.Generator, in_dim: int, out_dim: int) -> GaussianHead:
    return GaussianHead(init_layer(rng, in_dim, out_dim),
                        init_layer(rng, in_dim, out_dim))


def gaussian_nll(mean, variance, target) -> float:
    """Negative log-density of target under a diagonal Gaussian.

    Sum over dimensions: (t - m)^2 / (2 v) + 0.5 * log(2 pi v).
    """
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if mean.shape != variance.shape or mean.shape != target.shape:
        raise ShapeError("mean, variance and target must share a shape")
    if np.any(variance <= 0.0):
        raise ValueError("variance must be strictly positive")
    log_var = np.log(variance)
    return float(np.sum(nll_rows(np.atleast_2d(mean), np.atleast_2d(log_var),
                                 np.atleast_2d(target))))


def nll_rows(mean: np.ndarray, log_var: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-row diagonal Gaussian NLL for batched [n, d] arrays."""
    diff = target - mean
    return np.sum(0.5 * diff * diff * np.exp(-log_var)
                  + HALF_LOG_2PI + 0.5 * log_var, axis=1)


def nll_rows_backward(mean: np.ndarray, log_var: np.ndarray, target: np.ndarray,
                      d_rows: np.ndarray):
    """Gradients of sum(d_rows * nll_rows) wrt mean and log_var."""
    diff = mean - target
    inv_var = np.exp(-log_var)
    w = d_rows[:, None]
    d_mean = w * diff * inv_var
    d_log_var = w * (0.5 - 0.5 * diff * diff * inv_var)
    return d_mean, d_log_var


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_adam(params: list[np.ndarray], lr: float = 1e-3) -> AdamState:
    state = AdamState(lr=lr)
    state.m = [np.zeros_like(p) for p in params]
    state.v = [np.zeros_like(p) for p in params]
    return state


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState) -> list[np.ndarray]:
    """One bias-corrected Adam update, in place on params."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and Adam state are misaligned")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError("gradient shape does not match its parameter")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def net_layout(net: DenseNet) -> dict:
    """Shape manifest for a DenseNet: layer sizes plus activation tags."""
    return {
        "sizes": [net.in_dim] + [layer.out_dim for layer in net.layers],
        "activations": [layer.activation for layer in net.layers],
    }


def dense_from_layout(layout: dict) -> DenseNet:
    sizes = layout["sizes"]
    acts = layout["activations"]
    if len(acts) != len(sizes) - 1:
        raise ShapeError("layout sizes/activations are inconsistent")
    layers = [DenseLayer(np.zeros((sizes[i + 1], sizes[i])), np.zeros(sizes[i + 1]), acts[i])
              for i in range(len(acts))]
    return DenseNet(layers)


def head_layout(head: GaussianHead) -> dict:
    return {"in": head.in_dim, "out": head.out_dim}


def head_from_layout(layout: dict) -> GaussianHead:
    i, o = layout["in"], layout["out"]
    return GaussianHead(DenseLayer(np.zeros((o, i)), np.zeros(o)),
                        DenseLayer(np.zeros((o, i)), np.zeros(o)))
