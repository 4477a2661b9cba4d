"""Regression backends: linear least squares, kernel ridge, and a small MLP.

The MLP is a plain numpy feed-forward network trained with ADAM on mean-square
loss; training is single-threaded and bit-reproducible for a fixed seed.  The
same ADAM loop drives the dual optimizer, which minimizes the pathwise-max
objective 1/M sum_i max_n (Z_i,n - <beta, M_i,.,n>) over martingale weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._util import jittered_cholesky
from .errors import ConfigError, DomainError, NumericalError

__all__ = [
    "Standardizer",
    "linear_lsq",
    "RidgeSolution",
    "kernel_ridge",
    "Mlp",
    "MlpConfig",
    "mlp_fit",
    "Adam",
    "DualConfig",
    "LinearDualModel",
    "dual_minimize_linear",
    "MlpDualModel",
    "dual_minimize_mlp",
]


# ---------------------------------------------------------------------------
# feature standardization
# ---------------------------------------------------------------------------

class Standardizer:
    """Per-column z-scoring fitted on training data; constant columns pass through."""

    def __init__(self):
        self.mean: np.ndarray | None = None
        self.scale: np.ndarray | None = None

    def fit(self, X: np.ndarray) -> "Standardizer":
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 1e-12, sd, 1.0)
        # keep intercept-like columns intact
        const = sd <= 1e-12
        self.mean = np.where(const, 0.0, self.mean)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def fit_transform(self, X: np.ndarray) -> np.ndarray:
        return self.fit(X).transform(X)

    def state(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


# ---------------------------------------------------------------------------
# linear and kernel-ridge solvers
# ---------------------------------------------------------------------------

def linear_lsq(phi: np.ndarray, z: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Minimum-norm least squares via SVD with a relative singular-value cutoff."""
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(z))):
        raise DomainError("non-finite regression data")
    coeff, *_ = np.linalg.lstsq(phi, z, rcond=rcond)
    return coeff


@dataclass
class RidgeSolution:
    """Closed-form Nystrom kernel ridge: alpha = (K'K + M lam R)^-1 K'z."""

    alpha: np.ndarray
    lam: float
    landmark_idx: np.ndarray

    def fitted(self, K: np.ndarray) -> np.ndarray:
        return K @ self.alpha


def kernel_ridge(K: np.ndarray, R: np.ndarray, z: np.ndarray, lam: float,
                 m: int | None = None,
                 landmark_idx: np.ndarray | None = None) -> RidgeSolution:
    """Solve the landmark ridge system exactly.

    For lam = 0 the Gram normal matrix may be singular; the PSD jitter policy
    is applied and a remaining failure suggests using lam > 0.
    """
    if lam < 0:
        raise ConfigError("ridge parameter must be >= 0")
    m = K.shape[0] if m is None else m
    A = K.T @ K + m * lam * R
    rhs = K.T @ z
    try:
        chol, _ = jittered_cholesky(A, what="ridge normal matrix")
    except NumericalError as exc:
        raise NumericalError(
            f"{exc}; the landmark system is singular at lam={lam:g}, "
            "increase the ridge parameter"
        ) from exc
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    if landmark_idx is None:
        landmark_idx = np.arange(K.shape[1])
    return RidgeSolution(alpha, float(lam), np.asarray(landmark_idx, dtype=int))


# ---------------------------------------------------------------------------
# feed-forward network
# ---------------------------------------------------------------------------

_ACTIVATIONS = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "leaky_relu": (
        lambda x: np.where(x >= 0, x, 0.3 * x),
        lambda x: np.where(x >= 0, 1.0, 0.3),
    ),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
}


@dataclass
class MlpConfig:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "leaky_relu"
    epochs: int = 15
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0


class Adam:
    """Plain ADAM with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, shapes, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mh = self.m[i] / (1 - self.b1**self.t)
            vh = self.v[i] / (1 - self.b2**self.t)
            p -= self.lr * mh / (np.sqrt(vh) + self.eps)


class Mlp:
    """Feed-forward scalar-output network with analytic backprop."""

    def __init__(self, layer_sizes: list[int], activation: str = "leaky_relu",
                 seed: int = 0):
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.layer_sizes = list(layer_sizes)
        self.activation = activation
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            std = np.sqrt(2.0 / fan_in) if activation != "tanh" else np.sqrt(1.0 / fan_in)
            self.weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    # -- forward / backward ------------------------------------------------
    def forward(self, X: np.ndarray) -> np.ndarray:
        act = _ACTIVATIONS[self.activation][0]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = act(h @ W + b)
        return (h @ self.weights[-1] + self.biases[-1]).ravel()

    def _forward_cached(self, X):
        act = _ACTIVATIONS[self.activation][0]
        pre, post = [], [X]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ W + b
            pre.append(z)
            h = act(z)
            post.append(h)
        out = (h @ self.weights[-1] + self.biases[-1]).ravel()
        return out, (pre, post)

    def _backward(self, cache, grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) w.r.t. all parameters."""
        dact = _ACTIVATIONS[self.activation][1]
        pre, post = cache
        gW = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        delta = grad_out[:, None]  # (m, 1)
        gW[-1] = post[-1].T @ delta
        gb[-1] = delta.sum(axis=0)
        back = delta @ self.weights[-1].T
        for layer in range(len(self.weights) - 2, -1, -1):
            back = back * dact(pre[layer])
            gW[layer] = post[layer].T @ back
            gb[layer] = back.sum(axis=0)
            if layer > 0:
                back = back @ self.weights[layer].T
        return gW, gb

    # -- parameter plumbing --------------------------------------------------
    def params(self):
        return self.weights + self.biases

    def param_shapes(self):
        return [w.shape for w in self.weights] + [b.shape for b in self.biases]

    def clone(self) -> "Mlp":
        dup = Mlp(self.layer_sizes, self.activation, seed=0)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def save(self, path: str) -> None:
        """Versioned binary blob with JSON metadata."""
        arrays = {f"W{i}": w for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        meta = json.dumps({"format": 1, "layer_sizes": self.layer_sizes,
                           "activation": self.activation})
        np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)

    @staticmethod
    def load(path: str) -> "Mlp":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            net = Mlp(meta["layer_sizes"], meta["activation"], seed=0)
            net.weights = [data[f"W{i}"] for i in range(len(net.weights))]
            net.biases = [data[f"b{i}"] for i in range(len(net.biases))]
        return net


def mlp_fit(phi: np.ndarray, z: np.ndarray, config: MlpConfig,
            warm_start: Mlp | None = None) -> tuple[Mlp, list[float]]:
    """Train an MLP on mean-square loss with shuffled seeded mini-batches."""
    m, n_feat = phi.shape
    if warm_start is not None:
        net = warm_start.clone()
    else:
        net = Mlp([n_feat, *config.hidden, 1], config.activation, seed=config.seed)
    adam = Adam(net.param_shapes(), lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    history = []
    for _epoch in range(config.epochs):
        order = rng.permutation(m)
        running = 0.0
        for lo in range(0, m, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            out, cache = net._forward_cached(phi[idx])
            err = out - z[idx]
            loss = float(np.mean(err**2))
            if not np.isfinite(loss):
                raise NumericalError("MLP training diverged (NaN loss); lower the learning rate")
            running += loss * len(idx)
            gW, gb = net._backward(cache, 2.0 * err / len(idx))
            adam.step(net.params(), gW + gb)
        history.append(running / m)
    return net, history


# ---------------------------------------------------------------------------
# dual optimizer
# ---------------------------------------------------------------------------

@dataclass
class DualConfig:
    lr: float = 0.01
    iterations: int = 600
    smooth_tau: float = 0.0        # 0 = hard max; >0 anneals log-sum-exp to 0
    anneal_steps: int = 0
    ridge: float = 0.0             # lam * beta' R beta penalty (kernel backend)
    lsq_init: bool = True          # warm start from the terminal variance hedge
    seed: int = 0
    # mlp-integrand settings
    hidden: tuple[int, ...] = (64,) * 6
    activation: str = "relu"
    epochs: int = 6
    batch_size: int = 128
    mlp_lr: float = 1e-3


def _pathwise_values(Z: np.ndarray, mart: np.ndarray) -> np.ndarray:
    return Z - mart


def _hard_max_objective(G: np.ndarray) -> tuple[float, np.ndarray]:
    """Objective mean_i max_n G[i, n] and argmax one-hot weights."""
    nstar = np.argmax(G, axis=1)
    vals = G[np.arange(G.shape[0]), nstar]
    onehot = np.zeros_like(G)
    onehot[np.arange(G.shape[0]), nstar] = 1.0
    return float(vals.mean()), onehot


def _smooth_max_objective(G: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    shift = G.max(axis=1, keepdims=True)
    w = np.exp((G - shift) / tau)
    w /= w.sum(axis=1, keepdims=True)
    vals = shift.ravel() + tau * np.log(np.exp((G - shift) / tau).sum(axis=1))
    return float(vals.mean()), w


@dataclass
class LinearDualModel:
    """Martingale weights for a fixed basis (linear or kernel backend)."""

    beta: np.ndarray
    objective: float
    history: list[float] = field(default_factory=list, repr=False)

    def combine(self, basis: np.ndarray) -> np.ndarray:
        """(M, B, N+1) basis -> (M, N+1) combined martingale."""
        return np.einsum("mbn,b->mn", basis, self.beta)


def dual_minimize_linear(basis: np.ndarray, Z: np.ndarray,
                         config: DualConfig | None = None,
                         gram: np.ndarray | None = None) -> LinearDualModel:
    """ADAM on the (sub)gradient of the pathwise-max dual objective.

    basis : (M, B, N+1) martingale basis evaluated at the exercise dates.
    Z     : (M, N+1) discounted cash flows.
    gram  : optional (B, B) PSD matrix for the RKHS penalty ridge*beta'G beta.
    """
    config = config or DualConfig()
    m, n_basis, _ = basis.shape
    if Z.shape[0] != m:
        raise ConfigError("cash flows and basis disagree on the sample count")
    beta = np.zeros(n_basis)
    if config.lsq_init and n_basis > 0:
        # variance-optimal hedge of the terminal cash flow as a starting point
        target = Z[:, -1] - Z[:, -1].mean()
        beta = linear_lsq(basis[:, :, -1], target)
    adam = Adam([beta.shape], lr=config.lr)
    tau = config.smooth_tau
    history = []
    for it in range(config.iterations):
        mart = np.einsum("mbn,b->mn", basis, beta)
        G = _pathwise_values(Z, mart)
        if tau > 0:
            obj, w = _smooth_max_objective(G, tau)
            if config.anneal_steps and (it + 1) % config.anneal_steps == 0:
                tau = max(tau * 0.5, 1e-8)
        else:
            obj, w = _hard_max_objective(G)
        grad = -np.einsum("mn,mbn->b", w, basis) / m
        if config.ridge > 0 and gram is not None:
            obj += config.ridge * float(beta @ gram @ beta)
            grad = grad + 2.0 * config.ridge * (gram @ beta)
        if not np.isfinite(obj):
            raise NumericalError("dual optimization diverged; config: "
                                 f"lr={config.lr}, iters={config.iterations}")
        history.append(obj)
        adam.step([beta], [grad])
    mart = np.einsum("mbn,b->mn", basis, beta)
    final, _ = _hard_max_objective(_pathwise_values(Z, mart))
    return LinearDualModel(beta, final, history)


@dataclass
class MlpDualModel:
    """Network integrand theta(features_u); martingale rebuilt via Euler sums."""

    net: Mlp
    objective: float
    history: list[float] = field(default_factory=list, repr=False)

    def martingale(self, features: np.ndarray, dz: np.ndarray,
                   exercise_fidx: np.ndarray) -> np.ndarray:
        """(M, P, F) fine-step features + (M, P) driver increments -> (M, N+1)."""
        m, p, f = features.shape
        theta = self.net.forward(features.reshape(m * p, f)).reshape(m, p)
        cum = np.concatenate([np.zeros((m, 1)), np.cumsum(theta * dz, axis=1)], axis=1)
        return cum[:, exercise_fidx]


def dual_minimize_mlp(features: np.ndarray, dz: np.ndarray, Z: np.ndarray,
                      exercise_fidx: np.ndarray,
                      config: DualConfig | None = None) -> MlpDualModel:
    """Deep dual: min_theta mean_i max_n (Z_i,n - sum_{u<t_n} theta(feat_iu) dz_iu).

    The integrand is evaluated at every fine step below each exercise date;
    the subgradient flows through the Euler accumulation into the network.
    """
    config = config or DualConfig()
    m, p, n_feat = features.shape
    net = Mlp([n_feat, *config.hidden, 1], config.activation, seed=config.seed)
    net.weights[-1][:] = 0.0  # start from the zero martingale
    adam = Adam(net.param_shapes(), lr=config.mlp_lr)
    rng = np.random.default_rng(config.seed + 1)
    ex = np.asarray(exercise_fidx, dtype=int)
    # indicator[u, n] = 1 when fine step u lies strictly below exercise date n
    step_below = (np.arange(p)[:, None] < ex[None, :]).astype(float)
    tau = config.smooth_tau
    history = []
    for _epoch in range(config.epochs):
        order = rng.permutation(m)
        running = 0.0
        for lo in range(0, m, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            fb = features[idx]
            mb = len(idx)
            out, cache = net._forward_cached(fb.reshape(mb * p, n_feat))
            theta = out.reshape(mb, p)
            incr = theta * dz[idx]
            cum = np.concatenate([np.zeros((mb, 1)), np.cumsum(incr, axis=1)], axis=1)
            G = Z[idx] - cum[:, ex]
            if tau > 0:
                obj, w = _smooth_max_objective(G, tau)
            else:
                obj, w = _hard_max_objective(G)
            if not np.isfinite(obj):
                raise NumericalError("deep dual training diverged; lower mlp_lr")
            running += obj * mb
            # d obj / d theta[i, u] = -dz[i, u] * sum_n w[i, n] 1{u < ex_n} / mb
            upstream = -(dz[idx] * (w @ step_below.T)) / mb
            gW, gb = net._backward(cache, upstream.reshape(mb * p))
            adam.step(net.params(), gW + gb)
        history.append(running / m)
        if config.anneal_steps and tau > 0:
            tau = max(tau * 0.5, 0.0) if _epoch >= config.anneal_steps else tau
    model = MlpDualModel(net, history[-1] if history else float("nan"), history)
    mart = model.martingale(features, dz, ex)
    model.objective, _ = _hard_max_objective(Z - mart)
    return model
