"""Small fully-connected networks with hand-written backprop.

Weights are stacked along a leading ensemble axis so twin critics run in a
single batched matmul.  All parameters (and gradients) are views into one flat
buffer, which keeps optimiser and target-smoothing updates to a few array ops.
"""
import numpy as np


def _layout(sizes, n_members):
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(n_members, fan_in, fan_out), (n_members, 1, fan_out)]
    return shapes


def _views(flat, shapes):
    out, off = [], 0
    for shp in shapes:
        n = int(np.prod(shp))
        out.append(flat[off: off + n].reshape(shp))
        off += n
    return out


class EnsembleMLP:
    def __init__(self, sizes, n_members=1, rng=None, zero_final=False, final_scale=3e-3, dtype=np.float64):
        rng = np.random.default_rng(0) if rng is None else rng
        self.sizes = tuple(sizes)
        self.n_members = n_members
        self.shapes = _layout(self.sizes, n_members)
        total = sum(int(np.prod(s)) for s in self.shapes)
        self.flat = np.zeros(total, dtype=dtype)
        self.grad_flat = np.zeros(total, dtype=dtype)
        self.params = _views(self.flat, self.shapes)
        self.grads = _views(self.grad_flat, self.shapes)
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            fan_in = self.sizes[i]
            last = i == n_layers - 1
            if last and zero_final:
                continue
            bound = final_scale if last else 1.0 / np.sqrt(fan_in)
            W, b = self.params[2 * i], self.params[2 * i + 1]
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)

    @property
    def n_layers(self):
        return len(self.params) // 2

    def copy(self):
        other = EnsembleMLP.__new__(EnsembleMLP)
        other.sizes = self.sizes
        other.n_members = self.n_members
        other.shapes = self.shapes
        other.flat = self.flat.copy()
        other.grad_flat = np.zeros_like(self.grad_flat)
        other.params = _views(other.flat, other.shapes)
        other.grads = _views(other.grad_flat, other.shapes)
        return other

    def forward(self, x, params=None):
        """``x`` is (B, in) or (E, B, in); returns (E, B, out) and a backprop cache."""
        params = self.params if params is None else params
        h = x
        cache = [x]
        n = self.n_layers
        for i in range(n):
            h = np.matmul(h, params[2 * i])
            h += params[2 * i + 1]
            if i < n - 1:
                np.maximum(h, 0.0, out=h)
            cache.append(h)
        return h, cache

    def backward(self, cache, grad_out, params=None, need_input=False, need_params=True):
        """Gradients w.r.t. parameters (written into ``self.grads`` unless ``params`` is given)."""
        params = self.params if params is None else params
        grads = self.grads if params is self.params else [np.zeros_like(p) for p in params]
        g = grad_out
        for i in reversed(range(self.n_layers)):
            W = params[2 * i]
            if need_params:
                h_in = cache[i]
                if h_in.ndim == 2:
                    for e in range(W.shape[0]):
                        np.dot(h_in.T, g[e], out=grads[2 * i][e])
                else:
                    np.matmul(h_in.transpose(0, 2, 1), g, out=grads[2 * i])
                np.sum(g, axis=1, keepdims=True, out=grads[2 * i + 1])
            if i > 0 or need_input:
                g = np.matmul(g, W.transpose(0, 2, 1))
                if i > 0:
                    g *= cache[i] > 0
        return (grads if need_params else None), (g if need_input else None)


class Adam:
    """Adam over a single flat parameter array (updated in place)."""

    def __init__(self, flat, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros_like(flat)
        self.v = np.zeros_like(flat)
        self.t = 0

    def step(self, flat, grad):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        self.m *= self.b1
        self.m += (1 - self.b1) * grad
        self.v *= self.b2
        self.v += (1 - self.b2) * grad * grad
        denom = np.sqrt(self.v / c2)
        denom += self.eps
        flat -= (self.lr / c1) * self.m / denom
