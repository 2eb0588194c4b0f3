"""Trainable regression approximators and their least-squares trainer.

Three kinds share one small interface (``predict``, ``params``, text
serialization): ``tabular`` (exact lookup keyed on the full input row),
``linear`` (affine map, fitted by normal equations) and ``relu-net``
(optional trainable encoding and cross blocks, ReLU MLP, output truncation,
trained by gradient descent with hand-written reverse-mode gradients).
A ``constant`` kind is kept for closed-form contrast fits.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

KINDS = ("tabular", "linear", "constant", "relu-net")


class DataError(ValueError):
    """Training data is unusable (non-finite, inconsistent shapes)."""


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    depth: int = 2
    width: int = 16
    truncation: float = 1e3
    weight_bound: float = math.inf
    dcn_blocks: int = 0
    enc_width: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.depth < 1 or self.width < 1:
            raise ValueError("input_dim, depth and width must be >= 1")
        if not self.truncation > 0:
            raise ValueError("truncation must be positive")
        if not self.weight_bound > 0:
            raise ValueError("weight_bound must be positive")
        if self.dcn_blocks < 0 or self.enc_width < 0:
            raise ValueError("dcn_blocks and enc_width must be non-negative")

    @property
    def feature_dim(self) -> int:
        return self.input_dim * self.enc_width if self.enc_width else self.input_dim

    @classmethod
    def simulation(cls, input_dim: int, **overrides) -> "NetConfig":
        """8-wide trainable encoding, two cross blocks, one 256-unit hidden layer."""
        base = dict(depth=1, width=256, enc_width=8, dcn_blocks=2, truncation=50.0)
        base.update(overrides)
        return cls(input_dim=input_dim, **base)

    @classmethod
    def calibrated(cls, input_dim: int, **overrides) -> "NetConfig":
        """Small preset: 4-wide encoding and a 16-unit hidden layer."""
        base = dict(depth=1, width=16, enc_width=4, dcn_blocks=2, truncation=50.0)
        base.update(overrides)
        return cls(input_dim=input_dim, **base)

    def simpler(self) -> "NetConfig":
        """Half-width network of the same depth (default class for the debias fit)."""
        return replace(self, width=max(1, self.width // 2))


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    batch_size: int | None = None
    step_size: float = 1e-2
    momentum: float = 0.0
    stopping_tolerance: float = 0.0
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1 or None")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def truncate(z, bound):
    """sgn(z) * min(|z|, bound)."""
    return np.clip(z, -bound, bound)


def _as_rows(X, dim=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d input array, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"input dimension {X.shape[1]} != configured {dim}")
    return X


def _fmt(values) -> str:
    return "\n".join(repr(float(v)) for v in values)


class Approximator:
    kind: str = ""
    input_dim: int

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.predict(x)
        return float(out[0]) if x.ndim == 1 else out

    @property
    def params(self) -> np.ndarray:
        raise NotImplementedError

    def _header(self) -> dict:
        raise NotImplementedError

    def to_text(self) -> str:
        p = self.params
        return "\n".join([f"kind {self.kind}", "config " + json.dumps(self._header(), sort_keys=True),
                          f"params {p.size}", _fmt(p)]) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


class ConstantApprox(Approximator):
    kind = "constant"

    def __init__(self, input_dim: int, value: float = 0.0):
        self.input_dim = input_dim
        self.value = float(value)

    def predict(self, X):
        X = _as_rows(X, self.input_dim)
        return np.full(X.shape[0], self.value)

    @property
    def params(self):
        return np.array([self.value])

    def _header(self):
        return {"input_dim": self.input_dim}


class LinearApprox(Approximator):
    """y = coef . x + intercept."""

    kind = "linear"

    def __init__(self, coef, intercept: float = 0.0):
        self.coef = np.asarray(coef, dtype=float).ravel()
        self.intercept = float(intercept)
        self.input_dim = self.coef.size

    def predict(self, X):
        X = _as_rows(X, self.input_dim)
        return X @ self.coef + self.intercept

    @property
    def params(self):
        return np.append(self.coef, self.intercept)

    def _header(self):
        return {"input_dim": self.input_dim}


class TabularApprox(Approximator):
    """Lookup table keyed on the exact input row; unseen rows map to ``fill``."""

    kind = "tabular"

    def __init__(self, keys, values, fill: float = 0.0, input_dim: int | None = None):
        keys = np.asarray(keys, dtype=float)
        if input_dim is None:
            input_dim = keys.shape[-1] if keys.ndim == 2 else 0
        self.keys = keys.reshape(-1, input_dim)
        self.values = np.asarray(values, dtype=float).ravel()
        if len(self.keys) != self.values.size:
            raise ValueError("keys and values differ in length")
        self.fill = float(fill)
        self.input_dim = input_dim
        self._index = {tuple(k): i for i, k in enumerate(self.keys.tolist())}

    def predict(self, X):
        X = _as_rows(X, self.input_dim)
        index, vals, fill = self._index, self.values, self.fill
        out = np.empty(X.shape[0])
        # vectorize over unique rows: cheap when the table is small
        uniq, inv = np.unique(X, axis=0, return_inverse=True)
        u_out = np.array([vals[index[k]] if k in index else fill for k in map(tuple, uniq.tolist())])
        out[:] = u_out[inv.ravel()] if len(uniq) else 0.0
        return out

    def cell_value(self, key) -> float:
        i = self._index.get(tuple(np.asarray(key, dtype=float).tolist()))
        return self.fill if i is None else float(self.values[i])

    @property
    def params(self):
        return self.values.copy()

    def _header(self):
        return {"keys": self.keys.tolist(), "fill": self.fill, "input_dim": self.input_dim}


class ReluNet(Approximator):
    """Truncated ReLU network over row inputs.

    Layout: optional trainable encoding ``x (x) m`` flattened, ``dcn_blocks``
    cross blocks ``h <- x0 * (W h + b) + h``, ``depth`` ReLU layers of
    ``width`` units, linear scalar output, then truncation at ``truncation``.
    """

    kind = "relu-net"

    def __init__(self, config: NetConfig, params=None):
        self.config = config
        self.input_dim = config.input_dim
        self._shapes = self._layout(config)
        size = sum(int(np.prod(s)) for _, s in self._shapes)
        if params is None:
            params = self._initial_params(config)
        params = np.asarray(params, dtype=float)
        if params.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {params.shape}")
        self._params = params.copy()
        self._bind()

    @staticmethod
    def _layout(cfg: NetConfig):
        shapes = []
        if cfg.enc_width:
            shapes.append(("enc", (cfg.enc_width,)))
        F = cfg.feature_dim
        for i in range(cfg.dcn_blocks):
            shapes += [(f"cW{i}", (F, F)), (f"cb{i}", (F,))]
        fan = F
        for i in range(cfg.depth):
            shapes += [(f"W{i}", (cfg.width, fan)), (f"b{i}", (cfg.width,))]
            fan = cfg.width
        shapes += [("Wout", (1, fan)), ("bout", (1,))]
        return shapes

    @classmethod
    def _initial_params(cls, cfg: NetConfig) -> np.ndarray:
        rng = np.random.default_rng(cfg.seed)
        chunks = []
        for name, shape in cls._layout(cfg):
            if name == "enc":
                fan_in = 1
            elif name.startswith(("cW", "W")):
                fan_in = shape[1]
            else:  # bias: fan-in of its matching weight
                fan_in = chunks[-1].shape[1] if chunks[-1].ndim == 2 else 1
            bound = 1.0 / math.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, size=shape))
        flat = np.concatenate([c.ravel() for c in chunks])
        if math.isfinite(cfg.weight_bound):
            np.clip(flat, -cfg.weight_bound, cfg.weight_bound, out=flat)
        return flat

    def _bind(self):
        self.p = {}
        offset = 0
        for name, shape in self._shapes:
            n = int(np.prod(shape))
            self.p[name] = self._params[offset:offset + n].reshape(shape)
            offset += n

    @property
    def params(self):
        return self._params.copy()

    def set_params(self, flat) -> None:
        self._params[:] = flat

    def copy(self) -> "ReluNet":
        return ReluNet(self.config, self._params)

    def forward(self, X):
        """Return (truncated output, pre-truncation output, cache)."""
        cfg, p = self.config, self.p
        X = _as_rows(X, cfg.input_dim)
        n = X.shape[0]
        x0 = (X[:, :, None] * p["enc"]).reshape(n, -1) if cfg.enc_width else X
        h = x0
        cache = {"X": X, "x0": x0, "cross": [], "relu": []}
        for i in range(cfg.dcn_blocks):
            u = h @ p[f"cW{i}"].T + p[f"cb{i}"]
            cache["cross"].append((h, u))
            h = x0 * u + h
        for i in range(cfg.depth):
            a_in = h
            h = np.maximum(a_in @ p[f"W{i}"].T + p[f"b{i}"], 0.0)
            cache["relu"].append((a_in, h))
        z = h @ p["Wout"][0] + p["bout"][0]
        cache["last"] = h
        cache["z"] = z
        return truncate(z, cfg.truncation), z, cache

    def predict(self, X):
        return self.forward(X)[0]

    def backward(self, cache, dout) -> np.ndarray:
        """Gradient of sum_i dout_i * output_i with respect to the flat parameters."""
        cfg, p = self.config, self.p
        grad = np.zeros_like(self._params)
        g = {}
        offset = 0
        for name, shape in self._shapes:
            n = int(np.prod(shape))
            g[name] = grad[offset:offset + n].reshape(shape)
            offset += n
        # flat side of the truncation (including |z| == M) has zero slope
        dz = np.where(np.abs(cache["z"]) < cfg.truncation, dout, 0.0)
        h = cache["last"]
        g["Wout"][0] = dz @ h
        g["bout"][0] = dz.sum()
        dh = np.outer(dz, p["Wout"][0])
        for i in reversed(range(cfg.depth)):
            a_in, a_out = cache["relu"][i]
            dpre = dh * (a_out > 0)
            g[f"W{i}"][:] = dpre.T @ a_in
            g[f"b{i}"][:] = dpre.sum(axis=0)
            dh = dpre @ p[f"W{i}"]
        x0 = cache["x0"]
        dx0 = np.zeros_like(x0)
        for i in reversed(range(cfg.dcn_blocks)):
            h_in, u = cache["cross"][i]
            dx0 += dh * u
            du = dh * x0
            g[f"cW{i}"][:] = du.T @ h_in
            g[f"cb{i}"][:] = du.sum(axis=0)
            dh = du @ p[f"cW{i}"] + dh
        dx0 += dh
        if cfg.enc_width:
            X = cache["X"]
            n = X.shape[0]
            g["enc"][:] = np.einsum("nd,nde->e", X, dx0.reshape(n, cfg.input_dim, cfg.enc_width))
        return grad

    def _header(self):
        cfg = asdict(self.config)
        if not math.isfinite(cfg["weight_bound"]):
            cfg["weight_bound"] = "inf"
        return cfg


def from_text(text: str) -> Approximator:
    lines = text.strip().splitlines()
    if len(lines) < 3 or not lines[0].startswith("kind ") or not lines[1].startswith("config "):
        raise ValueError("not an approximator file")
    kind = lines[0].split(None, 1)[1]
    header = json.loads(lines[1].split(None, 1)[1])
    count = int(lines[2].split()[1])
    params = np.array([float(v) for v in lines[3:3 + count]])
    if params.size != count:
        raise ValueError("truncated parameter block")
    if kind == "relu-net":
        header["weight_bound"] = float(header["weight_bound"])
        return ReluNet(NetConfig(**header), params)
    if kind == "linear":
        return LinearApprox(params[:-1], params[-1])
    if kind == "constant":
        return ConstantApprox(header["input_dim"], params[0])
    if kind == "tabular":
        return TabularApprox(header["keys"], params, header["fill"], header["input_dim"])
    raise ValueError(f"unknown approximator kind {kind!r}")


def load(path) -> Approximator:
    with open(path) as fh:
        return from_text(fh.read())


# ---------------------------------------------------------------------------
# training


def _check_xy(X, y):
    X = _as_rows(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise ValueError("empty training data")
    if X.shape[0] != y.size:
        raise DataError("inputs and targets differ in length")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise DataError("non-finite training data")
    return X, y


def mse(approx: Approximator, X, y) -> float:
    X, y = _check_xy(X, y)
    return float(np.mean((approx.predict(X) - y) ** 2))


def descend(net: ReluNet, n: int, batch_grad: Callable[[np.ndarray], np.ndarray],
            train: TrainConfig, objective: Callable[[], float] | None = None,
            history: list | None = None) -> ReluNet:
    """Generic (mini-)batch gradient descent with optional heavy-ball momentum.

    ``batch_grad(idx)`` returns the gradient of the batch objective.  With
    ``stopping_tolerance > 0`` and a full-batch ``objective`` the loop stops
    once the per-epoch improvement falls below the tolerance.
    """
    rng = np.random.default_rng(train.seed)
    bound = net.config.weight_bound
    theta = net.params
    velocity = np.zeros_like(theta)
    bs = n if train.batch_size is None else min(train.batch_size, n)
    prev = objective() if objective is not None else None
    if history is not None and prev is not None:
        history.append(prev)
    steps = 0
    for _ in range(train.max_epochs):
        if train.max_steps is not None and steps >= train.max_steps:
            break
        order = np.arange(n) if bs == n else rng.permutation(n)
        for start in range(0, n, bs):
            if train.max_steps is not None and steps >= train.max_steps:
                break
            steps += 1
            idx = order[start:start + bs]
            grad = batch_grad(idx)
            velocity = train.momentum * velocity - train.step_size * grad
            theta = theta + velocity
            if math.isfinite(bound):
                np.clip(theta, -bound, bound, out=theta)
            net.set_params(theta)
        if objective is not None:
            cur = objective()
            if history is not None:
                history.append(cur)
            if train.stopping_tolerance > 0 and prev - cur < train.stopping_tolerance and cur <= prev:
                break
            prev = cur
    return net


def fit_least_squares(X, y, kind: str = "relu-net", net_config: NetConfig | None = None,
                      train_config: TrainConfig | None = None, history: list | None = None) -> Approximator:
    """Minimize mean squared error of ``kind`` on ``(X, y)``.

    Tabular and linear kinds are solved in closed form; ``relu-net`` starts
    from the seeded initialization in ``net_config`` and runs ``descend``.
    The returned network is never worse on the training data than its
    initialization: if descent ends higher, the initial weights are kept.
    """
    X, y = _check_xy(X, y)
    if kind == "tabular":
        keys, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.ravel()
        sums = np.bincount(inv, weights=y, minlength=len(keys))
        counts = np.bincount(inv, minlength=len(keys))
        return TabularApprox(keys, sums / counts)
    if kind == "linear":
        A = np.column_stack([X, np.ones(len(X))])
        sol, *_ = np.linalg.lstsq(A, y, rcond=None)
        return LinearApprox(sol[:-1], sol[-1])
    if kind == "constant":
        return ConstantApprox(X.shape[1], y.mean())
    if kind != "relu-net":
        raise ValueError(f"unknown approximator kind {kind!r}")
    if net_config is None:
        raise ValueError("relu-net needs a NetConfig")
    if net_config.input_dim != X.shape[1]:
        raise ValueError(f"input dimension {X.shape[1]} != configured {net_config.input_dim}")
    train_config = train_config or TrainConfig()
    net = ReluNet(net_config)
    init = net.params
    n = len(y)

    def batch_grad(idx):
        out, _, cache = net.forward(X[idx])
        return net.backward(cache, 2.0 * (out - y[idx]) / len(idx))

    full = (lambda: float(np.mean((net.predict(X) - y) ** 2)))
    start = full()
    descend(net, n, batch_grad, train_config,
            objective=full if (history is not None or train_config.stopping_tolerance > 0) else None,
            history=history)
    if not full() <= start:
        net.set_params(init)
    return net


def fit_contrast(sq_points, sq_weights, lin_points, lin_weights, kind: str = "relu-net",
                 net_config: NetConfig | None = None, train_config: TrainConfig | None = None,
                 history: list | None = None) -> Approximator:
    """Minimize the quadratic contrast

        (1/2n) sum_i sum_j w_ij g(z_ij)^2  -  (1/n) sum_i v_i g(x_i)

    with ``sq_points`` of shape (n, m, D), ``sq_weights`` (n, m),
    ``lin_points`` (n, D), ``lin_weights`` (n,).  The objective is used
    exactly as written; tabular, constant and linear kinds have closed forms.
    """
    Z = np.asarray(sq_points, dtype=float)
    W = np.asarray(sq_weights, dtype=float)
    Xl = _as_rows(lin_points)
    V = np.asarray(lin_weights, dtype=float).ravel()
    n = Xl.shape[0]
    if n == 0:
        raise ValueError("empty training data")
    if Z.ndim == 2:
        Z = Z[:, None, :]
        W = W.reshape(n, 1)
    m, D = Z.shape[1], Z.shape[2]
    if Z.shape[0] != n or W.shape != (n, m) or V.size != n or Xl.shape[1] != D:
        raise ValueError("inconsistent contrast data shapes")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(W)) and np.all(np.isfinite(Xl)) and np.all(np.isfinite(V))):
        raise DataError("non-finite contrast data")
    Zf = Z.reshape(n * m, D)
    Wf = W.ravel()

    if kind == "tabular":
        # per cell c: (1/2n) A_c g^2 - (1/n) B_c g  ->  g = B_c / A_c
        keys, inv = np.unique(np.vstack([Zf, Xl]), axis=0, return_inverse=True)
        inv = inv.ravel()
        A = np.bincount(inv[:n * m], weights=Wf, minlength=len(keys))
        B = np.bincount(inv[n * m:], weights=V, minlength=len(keys))
        vals = np.divide(B, A, out=np.zeros_like(B), where=A > 0)
        return TabularApprox(keys, vals)
    if kind in ("constant", "linear"):
        F_sq = np.ones((n * m, 1)) if kind == "constant" else np.column_stack([Zf, np.ones(n * m)])
        F_lin = np.ones((n, 1)) if kind == "constant" else np.column_stack([Xl, np.ones(n)])
        G = (F_sq * Wf[:, None]).T @ F_sq
        h = F_lin.T @ V
        sol, *_ = np.linalg.lstsq(G, h, rcond=None)
        if kind == "constant":
            return ConstantApprox(D, sol[0])
        return LinearApprox(sol[:-1], sol[-1])
    if kind != "relu-net":
        raise ValueError(f"unknown approximator kind {kind!r}")
    if net_config is None:
        raise ValueError("relu-net needs a NetConfig")
    train_config = train_config or TrainConfig()
    net = ReluNet(net_config)

    def batch_grad(idx):
        b = len(idx)
        pts = np.vstack([Z[idx].reshape(b * m, D), Xl[idx]])
        out, _, cache = net.forward(pts)
        dout = np.concatenate([W[idx].ravel() * out[:b * m] / b, -V[idx] / b])
        return net.backward(cache, dout)

    def objective():
        g_sq = net.predict(Zf)
        g_lin = net.predict(Xl)
        return float(0.5 * np.sum(Wf * g_sq ** 2) / n - np.sum(V * g_lin) / n)

    descend(net, n, batch_grad, train_config,
            objective=objective if (history is not None or train_config.stopping_tolerance > 0) else None,
            history=history)
    return net


def gradient_check(net: ReluNet, x, y: float, step: float = 1e-5) -> float:
    """Max relative discrepancy between reverse-mode and central-difference
    gradients of the squared loss ``(net(x) - y)^2``."""
    x = _as_rows(x, net.input_dim)
    out, _, cache = net.forward(x)
    analytic = net.backward(cache, 2.0 * (out - y))
    theta = net.params
    numeric = np.empty_like(theta)
    probe = net.copy()
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] += step
        probe.set_params(bumped)
        up = (probe.predict(x)[0] - y) ** 2
        bumped[i] -= 2 * step
        probe.set_params(bumped)
        down = (probe.predict(x)[0] - y) ** 2
        numeric[i] = (up - down) / (2 * step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def min_kink_distance(net: ReluNet, x) -> float:
    """Smallest |pre-activation| over hidden ReLU units at ``x``."""
    _, _, cache = net.forward(x)
    p = net.p
    dists = []
    for i, (a_in, _) in enumerate(cache["relu"]):
        dists.append(np.min(np.abs(a_in @ p[f"W{i}"].T + p[f"b{i}"])))
    return float(min(dists))


def make(kind: str, input_dim: int, net_config: NetConfig | None = None) -> Approximator:
    """Untrained approximator of the given kind (all-zero output for closed-form kinds)."""
    if kind == "relu-net":
        return ReluNet(net_config or NetConfig(input_dim=input_dim))
    if kind == "linear":
        return LinearApprox(np.zeros(input_dim))
    if kind == "constant":
        return ConstantApprox(input_dim)
    if kind == "tabular":
        return TabularApprox(np.zeros((0, input_dim)), [], input_dim=input_dim)
    raise ValueError(f"unknown approximator kind {kind!r}")
