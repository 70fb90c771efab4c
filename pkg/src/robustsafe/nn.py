"""Dense networks with hand-written reverse mode, batched over the leading axis.

Attackers need gradients with respect to network *inputs* (observations and
actions) as well as parameters, so every network exposes both.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
CHECKPOINT_FORMAT = "robustsafe-checkpoint/1"


class ShapeError(ValueError):
    pass


def _as_batch(x, width: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"expected input width {width}, got shape {x.shape}")
    return x, single


class Mlp:
    """ReLU hidden layers, linear output. Weights are stored ``[in, out]``."""

    def __init__(self, sizes, rng: np.random.Generator | None = None, out_scale: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ShapeError("an Mlp needs at least input and output widths")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        for i, (n_in, n_out) in enumerate(zip(self.sizes, self.sizes[1:])):
            bound = 1.0 / math.sqrt(n_in)
            W = rng.uniform(-bound, bound, size=(n_in, n_out))
            b = rng.uniform(-bound, bound, size=n_out)
            if i == len(self.sizes) - 2:
                W *= out_scale
                b *= out_scale
            self.weights.append(W)
            self.biases.append(b)

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, x) -> tuple[np.ndarray, list]:
        x, _ = _as_batch(x, self.in_dim)
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == last else np.maximum(z, 0.0)
            cache.append(h)
        return h, cache

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out, _ = self.forward(x)
        return out[0] if x.ndim == 1 else out

    def backward(self, cache: list, grad_out, with_params: bool = True
                 ) -> tuple[list[np.ndarray] | None, np.ndarray]:
        """Parameter gradients (summed over the batch) and the input gradient."""
        g = np.asarray(grad_out, dtype=float).reshape(cache[-1].shape)
        grads = [None] * (2 * len(self.weights)) if with_params else None
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (cache[i + 1] > 0)
            if with_params:
                grads[2 * i] = cache[i].T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.sizes = self.sizes
        new.weights = [W.copy() for W in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "params": [_tensor(p) for p in self.params()]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        net = cls.__new__(cls)
        net.sizes = tuple(doc["sizes"])
        tensors = [_untensor(t) for t in doc["params"]]
        net.weights, net.biases = tensors[0::2], tensors[1::2]
        return net


@dataclass
class Gradients:
    params: list[np.ndarray]
    inputs: np.ndarray | None = None


def forward(net: Mlp, x) -> np.ndarray:
    return net(x)


def backward(net: Mlp, x, output_grad) -> Gradients:
    _, cache = net.forward(x)
    grads, grad_in = net.backward(cache, output_grad)
    x = np.asarray(x)
    return Gradients(grads, grad_in[0] if x.ndim == 1 else grad_in)


@dataclass
class Normalizer:
    """Fixed affine input map ``(x - shift) / scale``."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, width: int) -> "Normalizer":
        return cls(np.zeros(width), np.ones(width))

    def __call__(self, x):
        return (x - self.shift) / self.scale

    def to_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        return cls(np.asarray(doc["shift"], dtype=float), np.asarray(doc["scale"], dtype=float))


class GaussianPolicyNet:
    """Diagonal Gaussian with an Mlp mean and a state-independent learnable log-std."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(128, 128),
                 rng: np.random.Generator | None = None, normalizer: Normalizer | None = None,
                 init_log_std: float = 0.0):
        self.mean_net = Mlp((obs_dim, *hidden, act_dim), rng, out_scale=0.01)
        self.log_std = np.full(act_dim, float(init_log_std))
        self.normalizer = normalizer or Normalizer.identity(obs_dim)

    @property
    def obs_dim(self) -> int:
        return self.mean_net.in_dim

    @property
    def act_dim(self) -> int:
        return self.mean_net.out_dim

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def params(self) -> list[np.ndarray]:
        return self.mean_net.params() + [self.log_std]

    def clamp(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def mean(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        return self.mean_net(self.normalizer(obs))

    def mean_backward(self, obs, grad_mean) -> tuple[list[np.ndarray], np.ndarray]:
        """Mean-head parameter gradients (log_std slot zero) and the observation gradient."""
        _, cache = self.mean_net.forward(self.normalizer(np.asarray(obs, dtype=float)))
        grads, g = self.mean_net.backward(cache, grad_mean)
        return grads + [np.zeros_like(self.log_std)], g / self.normalizer.scale

    def mean_with_vjp(self, obs):
        """Mean actions plus a closure mapping ``grad_mean`` to the observation gradient."""
        mu, cache = self.mean_net.forward(self.normalizer(np.asarray(obs, dtype=float)))

        def vjp(grad_mean):
            return self.mean_net.backward(cache, grad_mean, False)[1] / self.normalizer.scale

        return mu, vjp

    def mean_vjp(self, obs, grad_mean) -> np.ndarray:
        """``(d mean / d obs)^T grad_mean`` for a batch of observations."""
        return self.mean_backward(obs, grad_mean)[1]

    def log_prob(self, obs, act) -> np.ndarray:
        mu = self.mean(obs)
        z = (np.asarray(act, dtype=float) - mu) / self.std
        return -np.sum(0.5 * z * z + self.log_std + 0.5 * LOG_2PI, axis=-1)

    def log_prob_grad(self, obs, act, grad_logp) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
        """Backprop ``grad_logp`` (one weight per sample) through the log-density.

        Returns ``(param grads, log-probs, obs grads)``.
        """
        obs_n = self.normalizer(np.asarray(obs, dtype=float))
        mu, cache = self.mean_net.forward(obs_n)
        std = self.std
        diff = np.atleast_2d(np.asarray(act, dtype=float)) - mu
        z = diff / std
        logp = -np.sum(0.5 * z * z + self.log_std + 0.5 * LOG_2PI, axis=-1)
        w = np.asarray(grad_logp, dtype=float).reshape(-1, 1)
        d_mu = w * diff / std**2
        d_log_std = np.sum(w * (z * z - 1.0), axis=0)
        grads, g_obs = self.mean_net.backward(cache, d_mu)
        return grads + [d_log_std], logp, g_obs / self.normalizer.scale

    def copy(self) -> "GaussianPolicyNet":
        new = GaussianPolicyNet.__new__(GaussianPolicyNet)
        new.mean_net = self.mean_net.copy()
        new.log_std = self.log_std.copy()
        new.normalizer = Normalizer(self.normalizer.shift.copy(), self.normalizer.scale.copy())
        return new

    def to_dict(self) -> dict:
        return {"kind": "gaussian_policy", "mean_net": self.mean_net.to_dict(),
                "log_std": _tensor(self.log_std), "normalizer": self.normalizer.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussianPolicyNet":
        new = cls.__new__(cls)
        new.mean_net = Mlp.from_dict(doc["mean_net"])
        new.log_std = _untensor(doc["log_std"])
        new.normalizer = Normalizer.from_dict(doc["normalizer"])
        return new


class CriticNet:
    """Scalar head over ``state`` (V) or ``[state, action]`` (Q)."""

    def __init__(self, obs_dim: int, act_dim: int = 0, hidden=(128, 128),
                 rng: np.random.Generator | None = None, normalizer: Normalizer | None = None):
        self.obs_dim, self.act_dim = int(obs_dim), int(act_dim)
        self.net = Mlp((obs_dim + act_dim, *hidden, 1), rng)
        self.normalizer = normalizer or Normalizer.identity(obs_dim)

    @property
    def is_q(self) -> bool:
        return self.act_dim > 0

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def _inputs(self, obs, act):
        x = self.normalizer(np.atleast_2d(np.asarray(obs, dtype=float)))
        if self.is_q:
            x = np.concatenate([x, np.atleast_2d(np.asarray(act, dtype=float))], axis=1)
        return x

    def value(self, obs, act=None) -> np.ndarray:
        out, _ = self.net.forward(self._inputs(obs, act))
        return out[:, 0]

    def forward(self, obs, act=None):
        return self.net.forward(self._inputs(obs, act))

    def backward(self, cache, grad_out) -> tuple[list[np.ndarray], np.ndarray, np.ndarray | None]:
        """Returns ``(param grads, d/d obs, d/d action or None)``."""
        grads, g = self.net.backward(cache, np.asarray(grad_out, dtype=float).reshape(-1, 1))
        g_obs = g[:, :self.obs_dim] / self.normalizer.scale
        g_act = g[:, self.obs_dim:] if self.is_q else None
        return grads, g_obs, g_act

    def value_and_grad_action(self, obs, act) -> tuple[np.ndarray, np.ndarray]:
        out, cache = self.forward(obs, act)
        _, g = self.net.backward(cache, np.ones((len(out), 1)), False)
        return out[:, 0], g[:, self.obs_dim:]

    def grad_action(self, obs, act) -> np.ndarray:
        return self.value_and_grad_action(obs, act)[1]

    def copy(self) -> "CriticNet":
        new = CriticNet.__new__(CriticNet)
        new.obs_dim, new.act_dim = self.obs_dim, self.act_dim
        new.net = self.net.copy()
        new.normalizer = Normalizer(self.normalizer.shift.copy(), self.normalizer.scale.copy())
        return new

    def to_dict(self) -> dict:
        return {"kind": "critic", "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "net": self.net.to_dict(), "normalizer": self.normalizer.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "CriticNet":
        new = cls.__new__(cls)
        new.obs_dim, new.act_dim = int(doc["obs_dim"]), int(doc["act_dim"])
        new.net = Mlp.from_dict(doc["net"])
        new.normalizer = Normalizer.from_dict(doc["normalizer"])
        return new


def log_prob(policy: GaussianPolicyNet, state, action):
    return policy.log_prob(state, action)


def gaussian_kl(p_mean, p_std, q_mean, q_std):
    """``KL(p || q)`` for diagonal Gaussians, summed over the last axis."""
    p_std = np.asarray(p_std, dtype=float)
    q_std = np.asarray(q_std, dtype=float)
    if np.any(p_std <= 0) or np.any(q_std <= 0):
        raise ValueError("standard deviations must be positive")
    diff = np.asarray(p_mean, dtype=float) - np.asarray(q_mean, dtype=float)
    kl = np.log(q_std / p_std) + (p_std**2 + diff**2) / (2.0 * q_std**2) - 0.5
    return np.sum(kl, axis=-1)


def sample_action(policy: GaussianPolicyNet, state, rng: np.random.Generator):
    """Reparameterised draw ``mean + std * z`` and its log-density."""
    mu = policy.mean(state)
    z = rng.standard_normal(mu.shape)
    action = mu + policy.std * z
    logp = -np.sum(0.5 * z * z + policy.log_std + 0.5 * LOG_2PI, axis=-1)
    return action, logp


class Adam:
    """Adam over a list of arrays updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def polyak_update(target_params: list[np.ndarray], online_params: list[np.ndarray],
                  rho: float) -> None:
    """``target <- rho * target + (1 - rho) * online``, in place."""
    if len(target_params) != len(online_params):
        raise ShapeError("parameter lists differ in length")
    for t, o in zip(target_params, online_params):
        if t.shape != o.shape:
            raise ShapeError(f"shape mismatch {t.shape} vs {o.shape}")
        t *= rho
        t += (1.0 - rho) * o


# --- checkpoints ---------------------------------------------------------------

def _tensor(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": np.asarray(a, dtype=float).ravel().tolist()}


def _untensor(doc: dict) -> np.ndarray:
    return np.asarray(doc["data"], dtype=float).reshape(doc["shape"])


_KINDS = {"gaussian_policy": GaussianPolicyNet, "critic": CriticNet}


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path: str | Path, nets: dict, meta: dict | None = None) -> None:
    payload = {"nets": {name: net.to_dict() for name, net in nets.items()}, "meta": meta or {}}
    doc = {"format": CHECKPOINT_FORMAT, "checksum": _checksum(payload), **payload}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    payload = {"nets": doc["nets"], "meta": doc["meta"]}
    if _checksum(payload) != doc["checksum"]:
        raise ValueError(f"checkpoint {path} failed its checksum")
    nets = {name: _KINDS[d["kind"]].from_dict(d) for name, d in doc["nets"].items()}
    return nets, doc["meta"]
