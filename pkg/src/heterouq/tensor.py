"""Dense float64 matrix primitives with hand-written gradients.

Each differentiable operation is a forward/backward pair. Models chain the
backward calls explicitly instead of recording a tape, which keeps every
gradient path short enough to audit against the finite-difference checker
in :func:`grad_check`.
"""

import numpy as np


class Tensor:
    """A 2-D float64 matrix with an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad = np.zeros_like(arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class ParamSet:
    """Named parameters plus their Adam moment buffers and step counter."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values (grads and moments excluded)."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        if set(state) != set(self._params):
            raise ValueError("checkpoint parameter names do not match")
        for name, arr in state.items():
            t = self._params[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}")
            t.data[...] = arr

    # checkpoint container: an .npz archive of named matrices with a magic
    # version entry, so stale files fail loudly instead of silently.
    CHECKPOINT_MAGIC = "heterouq-checkpoint-v1"

    def save(self, path):
        arrays = {f"param/{name}": t.data for name, t in self._params.items()}
        np.savez(path, __format__=np.array(self.CHECKPOINT_MAGIC), **arrays)

    def load(self, path):
        with np.load(path) as archive:
            if "__format__" not in archive or str(archive["__format__"]) != self.CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not a {self.CHECKPOINT_MAGIC} checkpoint")
            state = {
                key[len("param/"):]: archive[key]
                for key in archive.files if key.startswith("param/")
            }
        self.load_state(state)


# ---------------------------------------------------------------------------
# differentiable primitives
# ---------------------------------------------------------------------------

def linear(x, w, b=None):
    """x @ w + b with b broadcast over rows. Returns (out, cache)."""
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    out = x @ w
    if b is not None:
        if b.shape != (1, w.shape[1]):
            raise ValueError(f"bias shape {b.shape} must be (1, {w.shape[1]})")
        out = out + b
    return out, (x, w)


def linear_backward(dout, cache):
    """Gradients (dx, dw, db) for ``linear``; db is the column sum of dout."""
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0, keepdims=True)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0.0)


def dropout(x, p, training, rng=None):
    """Zero entries with probability p and rescale survivors by 1/(1-p).

    Inactive (identity) when ``training`` is false or p == 0. Returns
    (out, scale) where scale is the saved mask/rescale matrix, or None when
    the op was the identity.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    scale = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * scale, scale


def dropout_backward(dout, scale):
    return dout if scale is None else dout * scale


def layer_norm(x, gain, shift, eps=1e-5):
    """Normalize each row to zero mean / unit variance, then gain * x + shift.

    Returns (out, cache).
    """
    if eps <= 0.0:
        raise ValueError("layer_norm eps must be positive")
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = x_hat * gain + shift
    return out, (x_hat, inv_std, gain)


def layer_norm_backward(dout, cache):
    """Gradients (dx, dgain, dshift) for ``layer_norm``."""
    x_hat, inv_std, gain = cache
    d = x_hat.shape[1]
    dgain = (dout * x_hat).sum(axis=0, keepdims=True)
    dshift = dout.sum(axis=0, keepdims=True)
    dxhat = dout * gain
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - x_hat * (dxhat * x_hat).sum(axis=1, keepdims=True) / d
    )
    return dx, dgain, dshift


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels, mask):
    """Mean negative log-probability of the true class over ``mask`` rows.

    Returns (loss, probs); pair with :func:`softmax_cross_entropy_backward`.
    """
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("cross entropy over an empty mask")
    probs = softmax(logits)
    picked = probs[mask, labels[mask]]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    return loss, probs


def softmax_cross_entropy_backward(probs, labels, mask):
    """(softmax - onehot) / |mask| on masked rows, zero elsewhere."""
    mask = np.asarray(mask, dtype=np.int64)
    dlogits = np.zeros_like(probs)
    dlogits[mask] = probs[mask]
    dlogits[mask, labels[mask]] -= 1.0
    dlogits[mask] /= mask.size
    return dlogits


# ---------------------------------------------------------------------------
# optimizer and gradient checking
# ---------------------------------------------------------------------------

def adam_step(params: ParamSet, lr, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=0.0):
    """One bias-corrected Adam update over all parameters.

    L2 regularization enters as ``weight_decay * value`` added to each
    gradient before the moment updates.
    """
    params.step_count += 1
    t = params.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad if weight_decay == 0.0 else p.grad + weight_decay * p.data
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def grad_check(f, params: ParamSet, h=1e-5, rng=None, max_coords_per_param=None):
    """Compare analytic gradients of ``f`` against central differences.

    ``f(params)`` must be deterministic, populate each parameter's ``.grad``
    (after zeroing), and return a scalar loss. When
    ``max_coords_per_param`` is set, a random subset of coordinates is
    probed per parameter instead of all of them.

    Returns the maximum relative error, with denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    analytic = {}
    f(params)
    for name, p in params.items():
        analytic[name] = p.grad.copy()

    worst = 0.0
    for name, p in params.items():
        coords = [(i, j) for i in range(p.rows) for j in range(p.cols)]
        if max_coords_per_param is not None and len(coords) > max_coords_per_param:
            if rng is None:
                raise ValueError("sampled grad_check needs an rng")
            picks = rng.choice(len(coords), size=max_coords_per_param, replace=False)
            coords = [coords[i] for i in picks]
        for i, j in coords:
            orig = p.data[i, j]
            p.data[i, j] = orig + h
            f_plus = f(params)
            p.data[i, j] = orig - h
            f_minus = f(params)
            p.data[i, j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            ana = analytic[name][i, j]
            rel = abs(numeric - ana) / max(abs(numeric), abs(ana), 1e-8)
            worst = max(worst, rel)
    f(params)  # leave grads consistent with the unperturbed parameters
    return worst


def assert_finite(arr, what="array"):
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"{what} contains NaN or Inf")
