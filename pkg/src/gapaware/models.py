"""Small analytic training problems with hand-written gradients.

Three model kinds are supported:

``quadratic``
    Per-sample loss ``0.5 * sum_j h_j (theta_j - x_ij)**2`` with a fixed
    diagonal curvature ``h`` spanning ``[1/condition, 1]``. The per-sample
    gradient deviates from the full gradient by ``h * (xbar - x_i)``, which
    does not depend on ``theta``, so the smoothness constant, the optimum and
    the gradient-variance bound are all known in closed form. Optional
    additive Gaussian noise (``noise_sigma`` per coordinate and per sample)
    is applied by :func:`stochastic_grad`.
``logistic``
    Binary logistic regression ``[w | b]`` on two Gaussian clusters.
``mlp1``
    One tanh hidden layer followed by a sigmoid (``output_dim == 1``) or
    softmax output.

Every loss includes the ``(weight_decay/2) * ||theta||**2`` term and every
gradient includes ``weight_decay * theta``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import DimensionError, LayerLayout, RngStream

KINDS = ("quadratic", "logistic", "mlp1")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "logistic"
    input_dim: int = 2
    output_dim: int = 1
    hidden_dim: int = 16
    weight_decay: float = 0.0
    noise_sigma: float = 0.0
    condition: float = 1.0  # quadratic only
    separation: float = 4.0  # cluster distance, in cluster std units
    spread: float = 1.0  # quadratic: std of sample centres around their mean

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in ("input_dim", "output_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("weight_decay", "noise_sigma", "spread"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ValueError(f"{name} must be finite and >= 0")
        if not self.condition >= 1:
            raise ValueError("condition must be >= 1")
        if self.kind == "logistic" and self.output_dim != 1:
            raise ValueError("logistic model is binary (output_dim=1)")

    @property
    def layout(self) -> LayerLayout:
        if self.kind == "quadratic":
            return LayerLayout.single(self.input_dim)
        if self.kind == "logistic":
            return LayerLayout.from_sizes([self.input_dim, 1])
        h, i, o = self.hidden_dim, self.input_dim, self.output_dim
        return LayerLayout.from_sizes([h * i, h, o * h, o])

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def curvature(self) -> np.ndarray:
        """Diagonal Hessian of the quadratic data term."""
        d = self.input_dim
        if d == 1:
            return np.ones(1)
        return np.geomspace(1.0, 1.0 / self.condition, d)

    @property
    def n_classes(self) -> int:
        return 2 if self.output_dim == 1 else self.output_dim


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if self.features.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("feature rows and targets differ in count")

    @property
    def M(self) -> int:
        return self.features.shape[0]

    def full_batch(self) -> np.ndarray:
        return np.arange(self.M)

    def to_csv(self, path) -> None:
        d = self.features.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j}" for j in range(d)] + ["target"])
            for row, t in zip(self.features, self.targets):
                w.writerow([repr(float(v)) for v in row] + [repr(float(t))])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
        return cls(body[:, :-1], body[:, -1])


def _check_theta(spec: ModelSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.dim,):
        raise DimensionError(f"theta has shape {theta.shape}, model expects ({spec.dim},)")
    return theta


# ---------------------------------------------------------------------------
# data + init


def make_synthetic(spec: ModelSpec, M: int, rng: RngStream) -> Dataset:
    """Deterministic synthetic dataset for ``spec``.

    ``info`` records the closed-form constants of the quadratic problem
    (``L``, ``f_star``, ``theta_star``, ``sigma2``).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    d = spec.input_dim
    if spec.kind == "quadratic":
        centre = rng.normal(d)
        X = centre + spec.spread * rng.normal((M, d))
        h = spec.curvature
        lam = spec.weight_decay
        xbar = X.mean(axis=0)
        dev = X - xbar
        theta_star = h * xbar / (h + lam)
        data = Dataset(X, np.zeros(M))
        f_star = loss(spec, theta_star, data, data.full_batch())
        info = {
            "L": float(h.max() + lam),
            "theta_star": theta_star,
            "f_star": f_star,
            # per-sample gradient variance: data spread plus injected noise
            "sigma2": float(np.mean(np.sum((h * dev) ** 2, axis=1)) + d * spec.noise_sigma**2),
        }
        data.info = info
        return data

    k = spec.n_classes
    if k == 2:
        u = rng.normal(d)
        u /= np.linalg.norm(u)
        means = np.stack([-0.5 * spec.separation * u, 0.5 * spec.separation * u])
    else:
        dirs = rng.normal((k, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        means = 0.5 * spec.separation * dirs
    labels = np.arange(M) % k
    labels = labels[rng.permutation(M)]
    X = means[labels] + rng.normal((M, d))
    return Dataset(X, labels.astype(np.float64))


def init_params(spec: ModelSpec, rng: RngStream) -> np.ndarray:
    if spec.kind != "mlp1":
        return np.zeros(spec.dim)
    h, i, o = spec.hidden_dim, spec.input_dim, spec.output_dim
    w1 = rng.uniform(h * i) * 2.0 - 1.0
    w2 = rng.uniform(o * h) * 2.0 - 1.0
    return np.concatenate([w1 / math.sqrt(i), np.zeros(h), w2 / math.sqrt(h), np.zeros(o)])


# ---------------------------------------------------------------------------
# loss / gradient


def _unpack_mlp(spec: ModelSpec, theta):
    h, i, o = spec.hidden_dim, spec.input_dim, spec.output_dim
    s = 0
    W1 = theta[s:s + h * i].reshape(h, i); s += h * i
    b1 = theta[s:s + h]; s += h
    W2 = theta[s:s + o * h].reshape(o, h); s += o * h
    b2 = theta[s:s + o]
    return W1, b1, W2, b2


def _data_loss_grad(spec: ModelSpec, theta, X, y, want_grad: bool):
    n = X.shape[0]
    if spec.kind == "quadratic":
        h = spec.curvature
        diff = theta - X
        value = 0.5 * float(np.mean(np.sum(h * diff * diff, axis=1)))
        return value, (h * diff.mean(axis=0) if want_grad else None)

    if spec.kind == "logistic":
        w, b = theta[:-1], theta[-1]
        z = X @ w + b
        s = 2.0 * y - 1.0
        value = float(np.mean(np.logaddexp(0.0, -s * z)))
        if not want_grad:
            return value, None
        # d/dz log(1+exp(-s z)) = -s * sigmoid(-s z)
        dz = -s * _sigmoid(-s * z) / n
        return value, np.concatenate([X.T @ dz, [dz.sum()]])

    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    a = np.tanh(X @ W1.T + b1)
    z = a @ W2.T + b2
    if spec.output_dim == 1:
        z = z[:, 0]
        s = 2.0 * y - 1.0
        value = float(np.mean(np.logaddexp(0.0, -s * z)))
        if not want_grad:
            return value, None
        dz = (-s * _sigmoid(-s * z) / n)[:, None]
    else:
        lab = y.astype(np.intp)
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        value = float(np.mean(lse - z[np.arange(n), lab]))
        if not want_grad:
            return value, None
        p = np.exp(z - lse[:, None])
        p[np.arange(n), lab] -= 1.0
        dz = p / n
    gW2 = dz.T @ a
    gb2 = dz.sum(axis=0)
    da = (dz @ W2) * (1.0 - a * a)
    gW1 = da.T @ X
    gb1 = da.sum(axis=0)
    return value, np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def _sigmoid(x):
    # split to stay finite for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _select(data: Dataset, batch):
    batch = np.asarray(batch, dtype=np.intp)
    if batch.size < 1 or batch.min() < 0 or batch.max() >= data.M:
        raise IndexError("batch indices out of range")
    return data.features[batch], data.targets[batch]


def loss(spec: ModelSpec, theta, data: Dataset, batch) -> float:
    theta = _check_theta(spec, theta)
    X, y = _select(data, batch)
    value, _ = _data_loss_grad(spec, theta, X, y, want_grad=False)
    if spec.weight_decay:
        value += 0.5 * spec.weight_decay * float(theta @ theta)
    return value


def grad(spec: ModelSpec, theta, data: Dataset, batch) -> np.ndarray:
    """Exact gradient of :func:`loss`, weight decay included."""
    theta = _check_theta(spec, theta)
    X, y = _select(data, batch)
    _, g = _data_loss_grad(spec, theta, X, y, want_grad=True)
    if spec.weight_decay:
        g = g + spec.weight_decay * theta
    return g


def stochastic_grad(spec: ModelSpec, theta, data: Dataset, batch, rng: RngStream | None) -> np.ndarray:
    """Batch gradient plus the quadratic model's injected noise.

    Each sample's gradient carries independent ``N(0, noise_sigma**2)``
    noise per coordinate, so the batch mean carries ``noise_sigma/sqrt(B)``.
    """
    g = grad(spec, theta, data, batch)
    if spec.kind == "quadratic" and spec.noise_sigma > 0 and rng is not None:
        B = np.asarray(batch).size
        g = g + (spec.noise_sigma / math.sqrt(B)) * rng.normal(g.size)
    return g


def fd_grad(spec: ModelSpec, theta, data: Dataset, batch, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of :func:`loss`, one coordinate at a time."""
    theta = _check_theta(spec, theta)
    h = abs(h)
    if h == 0:
        raise ValueError("step must be non-zero")
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (loss(spec, theta + e, data, batch) - loss(spec, theta - e, data, batch)) / (2 * h)
    return out


def accuracy(spec: ModelSpec, theta, data: Dataset) -> float | None:
    """Training accuracy of a classifier; ``None`` for the quadratic model."""
    theta = _check_theta(spec, theta)
    X, y = data.features, data.targets
    if spec.kind == "quadratic":
        return None
    if spec.kind == "logistic":
        pred = (X @ theta[:-1] + theta[-1]) > 0
        return float(np.mean(pred == (y > 0.5)))
    W1, b1, W2, b2 = _unpack_mlp(spec, theta)
    z = np.tanh(X @ W1.T + b1) @ W2.T + b2
    if spec.output_dim == 1:
        return float(np.mean((z[:, 0] > 0) == (y > 0.5)))
    return float(np.mean(z.argmax(axis=1) == y.astype(np.intp)))
