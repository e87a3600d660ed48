"""Fully connected network for the outflow pressure, written with numpy only.

Hidden layers use Softplus, the output layer is affine.  Training is plain
full-batch gradient descent on the mean squared error of normalized data.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import BundleError, NumericalError
from .formats import FMT, format_matrix, parse_matrix

__all__ = [
    "softplus",
    "Network",
    "Normalizer",
    "TrainResult",
    "init_network",
    "train",
    "split_indices",
    "gradient_check",
    "OutflowRegressor",
    "save_model",
    "load_model",
]

ACTIVATIONS = ("softplus", "identity")


def softplus(x):
    """``ln(1 + e^x)`` without overflow for large ``|x|``."""
    return np.logaddexp(0.0, x)


def _act(x, kind):
    return softplus(x) if kind == "softplus" else x


def _act_grad(x, kind):
    return expit(x) if kind == "softplus" else np.ones_like(x)


@dataclass
class Network:
    """Weights ``w[l]`` of shape ``(n_out, n_in)`` and biases ``beta[l]``."""

    weights: list
    biases: list
    activation: str = "softplus"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {l}: weight {w.shape} does not match bias {b.shape}")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: expects {w.shape[1]} inputs, previous layer gives "
                                 f"{self.weights[l - 1].shape[0]}")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self):
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                       self.activation)

    def forward(self, x, cache=False):
        """Outputs for inputs ``x`` of shape ``(n_samples, n_in)``.

        With ``cache=True`` also returns the pre-activations and layer outputs
        needed by backpropagation.
        """
        y = np.asarray(x, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        pre, outs = [], [y]
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = y @ w.T + b
            y = a if l == last else _act(a, self.activation)
            pre.append(a)
            outs.append(y)
        return (y, pre, outs) if cache else y

    def loss_and_grads(self, x, y):
        """Mean squared error and its gradients by backpropagation."""
        out, pre, outs = self.forward(x, cache=True)
        y = np.asarray(y, dtype=float).reshape(out.shape)
        diff = out - y
        loss = float(np.mean(diff**2))
        delta = 2.0 * diff / diff.size
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            gw[l] = delta.T @ outs[l]
            gb[l] = delta.sum(axis=0)
            if l:
                delta = (delta @ self.weights[l]) * _act_grad(pre[l - 1], self.activation)
        return loss, gw, gb

    def get_flat(self):
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = 0
        for w, b in zip(self.weights, self.biases):
            for p in (w, b):
                p[...] = theta[k:k + p.size].reshape(p.shape)
                k += p.size


def init_network(layer_sizes, seed=0, activation="softplus"):
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights and biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / np.sqrt(n_in)
        ws.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
        bs.append(rng.uniform(-lim, lim, size=n_out))
    return Network(ws, bs, activation)


@dataclass
class Normalizer:
    """Affine map to zero mean and unit standard deviation per column."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, x):
        x = np.asarray(x, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
        return (x - self.mean) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.mean


def split_indices(x, train_fraction, seed):
    """Seeded random train/test split of the samples at positions ``x``.

    The smallest and largest ``x`` always go to the training set, so that
    held-out samples test interpolation inside the training range.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples to split")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    ends = np.unique([np.argmin(x), np.argmax(x)])
    if n_train < ends.size or n - ends.size < 1:
        perm = np.random.default_rng(seed).permutation(n)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    inner = np.setdiff1d(np.arange(n), ends)
    perm = np.random.default_rng(seed).permutation(inner)
    k = n_train - ends.size
    return np.sort(np.concatenate([ends, perm[:k]])), np.sort(perm[k:])


@dataclass
class TrainResult:
    net: Network
    train_loss: np.ndarray
    test_loss: np.ndarray
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, int))


def train(net, x, y, epochs, learning_rate, x_test=None, y_test=None):
    """Full-batch gradient descent ``theta <- theta - eta dL/dtheta``.

    ``x`` and ``y`` are already normalized.  Returns a :class:`TrainResult`
    with the loss after every epoch (``test_loss`` empty without test data).
    The network is updated in place.
    """
    if not learning_rate > 0:
        raise ValueError("learning rate must be positive")
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two training samples")
    train_loss = np.empty(epochs)
    test_loss = np.empty(epochs if x_test is not None else 0)
    for e in range(epochs):
        _, gw, gb = net.loss_and_grads(x, y)
        for w, b, dw, db in zip(net.weights, net.biases, gw, gb):
            w -= learning_rate * dw
            b -= learning_rate * db
        out = net.forward(x)
        train_loss[e] = np.mean((out - np.asarray(y).reshape(out.shape)) ** 2)
        if not np.isfinite(train_loss[e]):
            raise NumericalError(f"training loss became non-finite at epoch {e + 1}")
        if x_test is not None:
            out_t = net.forward(x_test)
            test_loss[e] = np.mean((out_t - np.asarray(y_test).reshape(out_t.shape)) ** 2)
    return TrainResult(net, train_loss, test_loss)


def gradient_check(net, x, y, eps=1e-6):
    """Largest deviation between backprop and central-difference gradients,
    relative to the largest gradient entry."""
    _, gw, gb = net.loss_and_grads(x, y)
    g = np.concatenate([p.ravel() for pair in zip(gw, gb) for p in pair])
    work = net.copy()
    theta = work.get_flat()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += eps
        work.set_flat(t)
        lp = work.loss_and_grads(x, y)[0]
        t[i] -= 2 * eps
        work.set_flat(t)
        lm = work.loss_and_grads(x, y)[0]
        fd[i] = (lp - lm) / (2 * eps)
    scale = max(np.max(np.abs(g)), np.max(np.abs(fd)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(g - fd)) / scale)


class OutflowRegressor(RegressorMixin, BaseEstimator):
    """Time to outlet pressure regressor.

    Parameters
    ----------
    hidden_layers, neurons : int
        Depth and width of the hidden part.
    epochs : int
    learning_rate : float
    train_fraction : float
        Share of the samples used for training; the rest is the test set.
    seed : int
        Seeds both the initialization and the split.
    per_outlet : bool
        Train one single-output network per outlet instead of one
        multi-output network.

    Attributes
    ----------
    nets_ : list of Network
    x_norm_, y_norm_ : list of Normalizer
    train_loss_, test_loss_ : ndarray of shape (n_nets, epochs)
    t_range_ : (float, float)
    """

    def __init__(self, hidden_layers=2, neurons=32, epochs=20000, learning_rate=2e-2,
                 train_fraction=0.8, seed=0, per_outlet=False):
        self.hidden_layers = hidden_layers
        self.neurons = neurons
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.train_fraction = train_fraction
        self.seed = seed
        self.per_outlet = per_outlet

    def fit(self, t, y):
        t = np.asarray(t, dtype=float).ravel()
        y = np.asarray(y, dtype=float)
        y = y[:, None] if y.ndim == 1 else y
        if y.shape[0] != t.size:
            raise ValueError(f"{t.size} times but {y.shape[0]} targets")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValueError("training data must be finite")
        train_idx, test_idx = split_indices(t, self.train_fraction, self.seed)
        groups = [[j] for j in range(y.shape[1])] if self.per_outlet else [list(range(y.shape[1]))]
        self.nets_, self.x_norm_, self.y_norm_ = [], [], []
        tr_hist, te_hist = [], []
        for cols in groups:
            xn = Normalizer.fit(t[train_idx])
            yn = Normalizer.fit(y[train_idx][:, cols])
            sizes = [1] + [self.neurons] * self.hidden_layers + [len(cols)]
            net = init_network(sizes, self.seed)
            res = train(net, xn.transform(t[train_idx]), yn.transform(y[train_idx][:, cols]),
                        self.epochs, self.learning_rate,
                        xn.transform(t[test_idx]), yn.transform(y[test_idx][:, cols]))
            self.nets_.append(net)
            self.x_norm_.append(xn)
            self.y_norm_.append(yn)
            tr_hist.append(res.train_loss)
            te_hist.append(res.test_loss)
        self.groups_ = groups
        self.n_outputs_ = y.shape[1]
        self.train_idx_, self.test_idx_ = train_idx, test_idx
        self.train_loss_ = np.array(tr_hist)
        self.test_loss_ = np.array(te_hist)
        self.t_range_ = (float(t.min()), float(t.max()))
        return self

    def predict(self, t):
        """De-normalized outlet pressures, shape ``(n, n_outputs)``."""
        check_is_fitted(self, "nets_")
        t = np.asarray(t, dtype=float).ravel()
        out = np.empty((t.size, self.n_outputs_))
        for net, xn, yn, cols in zip(self.nets_, self.x_norm_, self.y_norm_, self.groups_):
            out[:, cols] = yn.inverse(net.forward(xn.transform(t)))
        return out

    def extrapolating(self, t):
        """Mask of times outside the training range."""
        check_is_fitted(self, "t_range_")
        t = np.asarray(t, dtype=float)
        lo, hi = self.t_range_
        return (t < lo) | (t > hi)

    def score(self, X, y, sample_weight=None):
        return super().score(X, np.asarray(y).reshape(len(np.ravel(X)), -1), sample_weight)


def _vec(x):
    return " ".join(FMT % v for v in np.atleast_1d(x))


def save_model(reg, path):
    """Write a fitted :class:`OutflowRegressor` as a ``ROMNN v1`` file."""
    check_is_fitted(reg, "nets_")
    lines = [
        "ROMNN v1",
        f"networks {len(reg.nets_)}",
        f"outputs {reg.n_outputs_}",
        f"t_range {_vec(reg.t_range_)}",
        f"params hidden_layers={reg.hidden_layers} neurons={reg.neurons} epochs={reg.epochs} "
        f"learning_rate={FMT % reg.learning_rate} train_fraction={FMT % reg.train_fraction} "
        f"seed={reg.seed} per_outlet={int(bool(reg.per_outlet))}",
    ]
    for net, xn, yn, cols in zip(reg.nets_, reg.x_norm_, reg.y_norm_, reg.groups_):
        lines += [
            f"network layers {' '.join(map(str, net.layer_sizes))} activation {net.activation}",
            f"columns {' '.join(map(str, cols))}",
            f"input_mean {_vec(xn.mean)}",
            f"input_scale {_vec(xn.scale)}",
            f"output_mean {_vec(yn.mean)}",
            f"output_scale {_vec(yn.scale)}",
        ]
        for w, b in zip(net.weights, net.biases):
            lines.append(format_matrix(w))
            lines.append(format_matrix(b[None, :]))
    Path(path).write_text("\n".join(lines) + "\n")


def _kv(line, key, source):
    parts = line.split()
    if not parts or parts[0] != key:
        raise BundleError(f"{source}: expected '{key}' line, got {line!r}")
    return parts[1:]


def load_model(path):
    """Read a ``ROMNN v1`` file back into an :class:`OutflowRegressor`."""
    source = str(path)
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    except FileNotFoundError as exc:
        raise BundleError(f"missing model file {path}") from exc
    if not lines or lines[0].strip() != "ROMNN v1":
        raise BundleError(f"{source}: not a ROMNN v1 file")
    try:
        n_nets = int(_kv(lines[1], "networks", source)[0])
        n_out = int(_kv(lines[2], "outputs", source)[0])
        t_range = tuple(float(v) for v in _kv(lines[3], "t_range", source))
        params = dict(kv.split("=") for kv in _kv(lines[4], "params", source))
        reg = OutflowRegressor(
            hidden_layers=int(params["hidden_layers"]), neurons=int(params["neurons"]),
            epochs=int(params["epochs"]), learning_rate=float(params["learning_rate"]),
            train_fraction=float(params["train_fraction"]), seed=int(params["seed"]),
            per_outlet=bool(int(params["per_outlet"])),
        )
        k = 5
        nets, xns, yns, groups = [], [], [], []
        for _ in range(n_nets):
            head = _kv(lines[k], "network", source)
            sizes = [int(s) for s in head[1:head.index("activation")]]
            activation = head[head.index("activation") + 1]
            cols = [int(c) for c in _kv(lines[k + 1], "columns", source)]
            vecs = [np.array([float(v) for v in _kv(lines[k + 2 + i], key, source)])
                    for i, key in enumerate(("input_mean", "input_scale", "output_mean", "output_scale"))]
            k += 6
            ws, bs = [], []
            for _ in range(len(sizes) - 1):
                w, k = parse_matrix(lines, k, source)
                b, k = parse_matrix(lines, k, source)
                ws.append(w)
                bs.append(b.ravel())
            net = Network(ws, bs, activation)
            if net.layer_sizes != sizes:
                raise BundleError(f"{source}: layer sizes do not match the weights")
            nets.append(net)
            xns.append(Normalizer(vecs[0], vecs[1]))
            yns.append(Normalizer(vecs[2], vecs[3]))
            groups.append(cols)
    except (IndexError, KeyError, ValueError) as exc:
        raise BundleError(f"{source}: malformed ROMNN file ({exc})") from None
    reg.nets_, reg.x_norm_, reg.y_norm_, reg.groups_ = nets, xns, yns, groups
    reg.n_outputs_ = n_out
    reg.t_range_ = t_range
    return reg
