"""Per-node dropout networks, Thompson-sampling forwards, and continual training."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .graph import mask_to_features
from .scoring import EvaluationRecord, combine_total

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

PARAM_NAMES = ("W1", "b1", "gamma", "beta", "W2", "b2")


class DropoutNet:
    """Single-hidden-layer net: W2' BatchNorm(ReLU(dropout(W1' x + b1))) + b2.

    A fresh Bernoulli dropout mask is drawn for every invocation, in both
    training and inference; batch norm uses batch statistics while training
    and running statistics at inference.
    """

    def __init__(self, d_in: int, hidden: int = 64, dropout: float = 0.1, rng: np.random.Generator | None = None):
        if not 0 < dropout < 1:
            raise ValueError("dropout rate must be in (0, 1)")
        rng = rng if rng is not None else np.random.default_rng()
        self.d_in = d_in
        self.hidden = hidden
        self.p = dropout
        limit1 = np.sqrt(6.0 / d_in)
        self.W1 = rng.uniform(-limit1, limit1, size=(d_in, hidden))
        self.b1 = np.zeros(hidden)
        self.gamma = np.ones(hidden)
        self.beta = np.zeros(hidden)
        limit2 = np.sqrt(6.0 / hidden)
        self.W2 = rng.uniform(-limit2, limit2, size=(hidden, 1))
        self.b2 = 0.0
        self.running_mean = np.zeros(hidden)
        self.running_var = np.ones(hidden)
        self._adam_m = {name: np.zeros_like(np.atleast_1d(getattr(self, name)), dtype=float) for name in PARAM_NAMES}
        self._adam_v = {name: np.zeros_like(np.atleast_1d(getattr(self, name)), dtype=float) for name in PARAM_NAMES}
        self._adam_t = 0

    # -- forward passes -------------------------------------------------

    def _hidden_pre_bn(self, X: np.ndarray, mask: np.ndarray) -> np.ndarray:
        Z1 = X @ self.W1 + self.b1
        scaled = (1.0 - mask) / (1.0 - self.p) * Z1
        return np.maximum(scaled, 0.0)

    def predict(self, X: np.ndarray, rng: np.random.Generator, mask: np.ndarray | None = None) -> np.ndarray:
        """Inference-mode stochastic forward; one fresh mask row per input row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if mask is None:
            mask = (rng.random((X.shape[0], self.hidden)) < self.p).astype(float)
        A = self._hidden_pre_bn(X, mask)
        Ahat = (A - self.running_mean) / np.sqrt(self.running_var + BN_EPS)
        Y = self.gamma * Ahat + self.beta
        return Y @ self.W2[:, 0] + self.b2

    def loss_and_grads(self, X: np.ndarray, target: np.ndarray, rng: np.random.Generator, mask: np.ndarray | None = None, update_stats: bool = True):
        """Square loss and analytic parameter gradients (training-mode forward)."""
        X = np.asarray(X, dtype=float)
        B = X.shape[0]
        if mask is None:
            mask = (rng.random((B, self.hidden)) < self.p).astype(float)
        Z1 = X @ self.W1 + self.b1
        drop = (1.0 - mask) / (1.0 - self.p)
        U = drop * Z1
        A = np.maximum(U, 0.0)
        mu = A.mean(axis=0)
        var = A.var(axis=0)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        Ahat = (A - mu) * inv
        Y = self.gamma * Ahat + self.beta
        out = Y @ self.W2[:, 0] + self.b2
        err = out - target
        loss = float(np.mean(err**2))

        dout = 2.0 * err / B
        dW2 = (Y.T @ dout)[:, None]
        db2 = float(np.sum(dout))
        dY = np.outer(dout, self.W2[:, 0])
        dgamma = np.sum(dY * Ahat, axis=0)
        dbeta = np.sum(dY, axis=0)
        dAhat = dY * self.gamma
        dA = (inv / B) * (B * dAhat - dAhat.sum(axis=0) - Ahat * np.sum(dAhat * Ahat, axis=0))
        dU = dA * (U > 0)
        dZ1 = dU * drop
        dW1 = X.T @ dZ1
        db1 = dZ1.sum(axis=0)

        if update_stats:
            self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mu
            self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * var
        grads = {"W1": dW1, "b1": db1, "gamma": dgamma, "beta": dbeta, "W2": dW2, "b2": db2}
        return loss, grads

    def adam_step(self, grads: dict, lr: float) -> None:
        self._adam_t += 1
        b1, b2 = ADAM_BETAS
        for name in PARAM_NAMES:
            g = np.atleast_1d(np.asarray(grads[name], dtype=float))
            m = self._adam_m[name] = b1 * self._adam_m[name] + (1 - b1) * g
            v = self._adam_v[name] = b2 * self._adam_v[name] + (1 - b2) * g**2
            mhat = m / (1 - b1**self._adam_t)
            vhat = v / (1 - b2**self._adam_t)
            step = lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
            if name == "b2":
                self.b2 = float(self.b2 - step[0])
            else:
                setattr(self, name, getattr(self, name) - step.reshape(np.shape(getattr(self, name))))

    def params_finite(self) -> bool:
        return all(np.isfinite(np.atleast_1d(getattr(self, name))).all() for name in PARAM_NAMES)

    def state_dict(self) -> dict:
        out = {name: np.asarray(getattr(self, name)).tolist() for name in PARAM_NAMES}
        out["running_mean"] = self.running_mean.tolist()
        out["running_var"] = self.running_var.tolist()
        out["d_in"], out["hidden"], out["p"] = self.d_in, self.hidden, self.p
        return out

    def load_state_dict(self, state: dict) -> None:
        for name in PARAM_NAMES:
            value = np.asarray(state[name], dtype=float)
            setattr(self, name, float(value) if name == "b2" else value)
        self.running_mean = np.asarray(state["running_mean"], dtype=float)
        self.running_var = np.asarray(state["running_var"], dtype=float)


def forward_stochastic(net: DropoutNet, x: np.ndarray, rng: np.random.Generator) -> float:
    """One stochastic forward pass through a single net (fresh dropout mask)."""
    return float(net.predict(np.asarray(x, dtype=float)[None, :], rng)[0])


class ReplayBuffer:
    """Fixed-capacity uniform reservoir over a stream (Algorithm R semantics)."""

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.items: list = []
        self.seen = 0

    def __len__(self) -> int:
        return len(self.items)

    def update(self, item, rng: np.random.Generator) -> None:
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
        elif rng.random() < self.capacity / self.seen:
            self.items[rng.integers(self.capacity)] = item

    def extend(self, items, rng: np.random.Generator) -> None:
        for item in items:
            self.update(item, rng)


def reservoir_update(buffer: ReplayBuffer, item, rng: np.random.Generator) -> None:
    buffer.update(item, rng)


class SurrogateEnsemble:
    """d independent dropout networks mapping parent features to local scores."""

    def __init__(self, d: int, hidden: int = 64, dropout: float = 0.1, target_scale: float = 1.0, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.d = d
        self.target_scale = target_scale
        self.nets = [DropoutNet(d, hidden=hidden, dropout=dropout, rng=rng) for _ in range(d)]

    def thompson_batch(self, adjs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Sampled locals for a (U, d, d) adjacency batch; returns (U, d)."""
        U = adjs.shape[0]
        out = np.empty((U, self.d))
        for i, net in enumerate(self.nets):
            out[:, i] = net.predict(adjs[:, :, i].astype(float), rng)
        return out * self.target_scale

    def save(self, path) -> None:
        blob = {"format": "drbo-ensemble", "version": 1, "d": self.d,
                "target_scale": self.target_scale,
                "nets": [net.state_dict() for net in self.nets]}
        with open(path, "w") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path) -> "SurrogateEnsemble":
        with open(path) as fh:
            blob = json.load(fh)
        if blob.get("format") != "drbo-ensemble" or blob.get("version") != 1:
            raise ValueError("unrecognized ensemble checkpoint format")
        first = blob["nets"][0]
        ens = cls(blob["d"], hidden=first["hidden"], dropout=first["p"], target_scale=blob["target_scale"])
        for net, state in zip(ens.nets, blob["nets"]):
            net.load_state_dict(state)
        return ens


def thompson_sample_locals(ensemble: SurrogateEnsemble, parent_masks, rng: np.random.Generator) -> np.ndarray:
    """One sampled local score per node for a single DAG's parent masks."""
    d = ensemble.d
    out = np.empty(d)
    for i, (net, mask) in enumerate(zip(ensemble.nets, parent_masks)):
        out[i] = forward_stochastic(net, mask_to_features(mask, d), rng)
    return out * ensemble.target_scale


def combine_af(locals_: np.ndarray, edge_count: int, n: int, variant: str) -> float:
    """Acquisition value from sampled locals; identical to the exact combine rule."""
    return combine_total(np.asarray(locals_, dtype=float), edge_count, n, variant)


@dataclass
class TrainItem:
    """One scored DAG flattened for surrogate training."""

    features: np.ndarray  # (d, d); row i = dense parent indicator of node i
    locals: np.ndarray  # (d,)


def record_to_item(rec: EvaluationRecord) -> TrainItem:
    adj = rec.dag.adj
    return TrainItem(features=adj.T.astype(np.float32), locals=np.asarray(rec.locals, dtype=float))


def _stack_params(nets: list) -> dict:
    out = {name: np.stack([np.atleast_1d(getattr(net, name)) for net in nets]).astype(float)
           for name in PARAM_NAMES}
    out["W2"] = out["W2"][:, :, 0]  # (d, hidden)
    out["b2"] = out["b2"][:, 0]  # (d,)
    return out


def _unstack_params(nets: list, P: dict) -> None:
    for i, net in enumerate(nets):
        net.W1 = P["W1"][i]
        net.b1 = P["b1"][i]
        net.gamma = P["gamma"][i]
        net.beta = P["beta"][i]
        net.W2 = P["W2"][i][:, None]
        net.b2 = float(P["b2"][i])


def _batched_step(ensemble: SurrogateEnsemble, P: dict, X: np.ndarray, T: np.ndarray, rng: np.random.Generator, mask: np.ndarray | None = None):
    """Square loss and gradients for all nets at once; X is (d, N, d_in), T (d, N).

    Heavy tensors run in float32; the Adam update upstream stays in float64.
    """
    d, N, _ = X.shape
    p = ensemble.nets[0].p
    hidden = ensemble.nets[0].hidden
    X = np.ascontiguousarray(X, dtype=np.float32)
    if mask is None:
        keep = rng.random((d, N, hidden), dtype=np.float32) >= p
    else:
        keep = np.asarray(mask) == 0.0
    scale = np.float32(1.0 / (1.0 - p))
    W1 = P["W1"].astype(np.float32)
    gamma = P["gamma"].astype(np.float32)[:, None, :]
    W2 = P["W2"].astype(np.float32)
    A = X @ W1 + P["b1"].astype(np.float32)[:, None, :]
    A *= keep
    A *= scale
    np.maximum(A, 0.0, out=A)
    relu_on = A > 0
    mu = A.mean(axis=1)
    var = np.square(A).mean(axis=1) - mu**2
    np.maximum(var, 0.0, out=var)
    inv = 1.0 / np.sqrt(var + np.float32(BN_EPS))
    Ahat = (A - mu[:, None, :]) * inv[:, None, :]
    Y = gamma * Ahat
    Y += P["beta"].astype(np.float32)[:, None, :]
    out = np.einsum("dnh,dh->dn", Y, W2) + P["b2"].astype(np.float32)[:, None]
    err = out - T.astype(np.float32)
    losses = np.mean(err.astype(float) ** 2, axis=1)

    dout = err * np.float32(2.0 / N)  # (d, N)
    dW2 = np.einsum("dnh,dn->dh", Y, dout)
    db2 = dout.sum(axis=1)
    dY = dout[:, :, None] * W2[:, None, :]
    dgamma = np.einsum("dnh,dnh->dh", dY, Ahat)
    dbeta = dY.sum(axis=1)
    dAhat = dY
    dAhat *= gamma
    dA = N * dAhat - dAhat.sum(axis=1, keepdims=True) \
        - Ahat * np.einsum("dnh,dnh->dh", dAhat, Ahat)[:, None, :]
    dA *= inv[:, None, :] / np.float32(N)
    dA *= relu_on
    dA *= keep
    dA *= scale
    dW1 = X.transpose(0, 2, 1) @ dA
    db1 = dA.sum(axis=1)
    grads = {"W1": dW1.astype(float), "b1": db1.astype(float),
             "gamma": dgamma.astype(float), "beta": dbeta.astype(float),
             "W2": dW2.astype(float), "b2": db2.astype(float)}
    return losses, grads, mu.astype(float), var.astype(float)


def train_continual(
    ensemble: SurrogateEnsemble,
    new_batch: list,
    buffer: ReplayBuffer,
    rng: np.random.Generator,
    n_grads: int = 10,
    lr: float = 0.1,
) -> None:
    """Adam steps on new evaluations plus the replay buffer, then buffer insert.

    Each gradient step uses the full union (buffer + new batch); the new items
    enter the reservoir only after training so the step count per datapoint is
    independent of buffer occupancy. All nets step together on stacked tensors.
    """
    new_items = [rec if isinstance(rec, TrainItem) else record_to_item(rec) for rec in new_batch]
    pool = list(buffer.items) + new_items
    if pool:
        nets = ensemble.nets
        feats = np.stack([item.features for item in pool]).astype(float)  # (N, d, d)
        targets = np.stack([item.locals for item in pool]) / ensemble.target_scale
        X = feats.transpose(1, 0, 2)  # (d, N, d_in)
        T = np.ascontiguousarray(targets.T)  # (d, N)
        P = _stack_params(nets)
        M = {name: np.stack([net._adam_m[name] for net in nets]) for name in PARAM_NAMES}
        V = {name: np.stack([net._adam_v[name] for net in nets]) for name in PARAM_NAMES}
        M["W2"], V["W2"] = M["W2"][:, :, 0], V["W2"][:, :, 0]
        M["b2"], V["b2"] = M["b2"][:, 0], V["b2"][:, 0]
        t = nets[0]._adam_t
        b1m, b2m = ADAM_BETAS
        for _ in range(n_grads):
            losses, grads, mu, var = _batched_step(ensemble, P, X, T, rng)
            ok = np.isfinite(losses)
            for name in PARAM_NAMES:
                ok &= np.isfinite(grads[name]).all(axis=tuple(range(1, grads[name].ndim)))
            if not ok.all():
                log.warning("non-finite loss/gradients at nodes %s; skipping their step",
                            np.flatnonzero(~ok).tolist())
            t += 1
            for name in PARAM_NAMES:
                g = grads[name]
                M[name] = b1m * M[name] + (1 - b1m) * g
                V[name] = b2m * V[name] + (1 - b2m) * g**2
                step = lr * (M[name] / (1 - b1m**t)) / (np.sqrt(V[name] / (1 - b2m**t)) + ADAM_EPS)
                sel = ok.reshape((-1,) + (1,) * (g.ndim - 1))
                P[name] = np.where(sel, P[name] - step, P[name])
            for i, net in enumerate(nets):
                if ok[i]:
                    net.running_mean = (1 - BN_MOMENTUM) * net.running_mean + BN_MOMENTUM * mu[i]
                    net.running_var = (1 - BN_MOMENTUM) * net.running_var + BN_MOMENTUM * var[i]
        _unstack_params(nets, P)
        for i, net in enumerate(nets):
            for name in PARAM_NAMES:
                m, v = M[name][i], V[name][i]
                if name == "W2":
                    m, v = m[:, None], v[:, None]
                net._adam_m[name] = np.atleast_1d(m)
                net._adam_v[name] = np.atleast_1d(v)
            net._adam_t = t
            assert net.params_finite(), "training produced non-finite parameters"
    buffer.extend(new_items, rng)
