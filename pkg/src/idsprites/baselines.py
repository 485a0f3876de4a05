"""Continual-learning baselines: naive fine-tuning, experience replay (buffer-only
and mixed mini-batches), and the invariant contrastive learner.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .errors import ConfigError
from .nets import MLP, AdamState, adam_step
from .rng import Rng, derive_seed
from .stream import ClassBalancedReservoir

log = logging.getLogger(__name__)

BODY_SIZES = (1024, 256, 64)


# ---------------------------------------------------------------- classifier


class ClassifierNet:
    """Shared MLP body with a linear head that grows one logit per new class."""

    def __init__(self, body_sizes=BODY_SIZES, seed: int = 0, lr: float = 1e-3):
        self.seed = seed
        self.net = MLP(list(body_sizes) + [1], seed)
        self.net.params[-2] = self.net.params[-2][:, :0]
        self.net.params[-1] = self.net.params[-1][:0]
        self.net.sizes[-1] = 0
        self.state = AdamState(self.net.params, lr=lr)

    @property
    def num_classes(self) -> int:
        return self.net.sizes[-1]

    def ensure_classes(self, n: int) -> None:
        extra = n - self.num_classes
        if extra > 0:
            self.net.grow_output(extra, derive_seed(self.seed, self.num_classes))
            self.state.grow_like(self.net.params)

    def logits(self, x) -> np.ndarray:
        return self.net.forward(x)

    def predict(self, x, batch: int = 512) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.num_classes == 0:
            return np.full(len(x), -1, dtype=np.int64)
        out = [np.argmax(self.logits(x[k:k + batch]), axis=1) for k in range(0, len(x), batch)]
        return np.concatenate(out).astype(np.int64) if out else np.zeros(0, dtype=np.int64)

    def loss_and_grad(self, x, labels):
        """Mean softmax cross-entropy and parameter gradients."""
        out, acts = self.net.forward(x, keep=True)
        out = out - out.max(axis=1, keepdims=True)
        p = np.exp(out)
        p /= p.sum(axis=1, keepdims=True)
        n = len(labels)
        loss = float(-np.log(p[np.arange(n), labels] + 1e-300).mean())
        d = p
        d[np.arange(n), labels] -= 1.0
        return loss, self.net.backward(acts, d / n)

    def step(self, x, labels) -> float:
        loss, grads = self.loss_and_grad(x, labels)
        adam_step(self.net, grads, self.state)
        return loss


def _epochs(clf: ClassifierNet, x, y, epochs: int, batch_size: int, seed: int) -> list[float]:
    log_ = []
    for epoch in range(epochs):
        order = np.asarray(Rng(derive_seed(seed, epoch)).permutation(len(x)), dtype=np.intp)
        total = 0.0
        for s in range(0, len(x), batch_size):
            idx = order[s:s + batch_size]
            total += clf.step(x[idx], y[idx]) * len(idx)
        log_.append(total / max(len(x), 1))
    return log_


def finetune_step(clf: ClassifierNet, x, labels, epochs: int = 5, batch_size: int = 64, seed: int = 0) -> list[float]:
    """Cross-entropy training on the current task only."""
    labels = np.asarray(labels, dtype=np.int64)
    if epochs <= 0 or len(labels) == 0:
        return []
    clf.ensure_classes(int(labels.max()) + 1)
    return _epochs(clf, np.asarray(x, dtype=np.float64), labels, epochs, batch_size, seed)


class ReplayBuffer(ClassBalancedReservoir):
    """Class-balanced reservoir of (class id, feature row) training samples."""

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = self.all_items()
        if not pairs:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        x = np.stack([f for _, f in pairs])
        y = np.array([c for c, _ in pairs], dtype=np.int64)
        return x, y


def replay_buffer_only_step(clf: ClassifierNet, buffer: ReplayBuffer, x, labels, epochs: int = 5,
                            batch_size: int = 64, seed: int = 0) -> list[float]:
    """Fold the task into the buffer, then train exclusively on the buffer."""
    labels = np.asarray(labels, dtype=np.int64)
    seen = len(set(buffer.items) | set(labels.tolist()))
    if buffer.capacity < seen:
        raise ConfigError(f"replay capacity {buffer.capacity} cannot hold one sample for each of {seen} classes")
    buffer.add(labels.tolist(), list(np.asarray(x, dtype=np.float64)))
    if len(labels):
        clf.ensure_classes(int(labels.max()) + 1)
    if epochs <= 0:
        return []
    bx, by = buffer.arrays()
    return _epochs(clf, bx, by, epochs, batch_size, seed)


def replay_mixed_step(clf: ClassifierNet, buffer: ReplayBuffer, x, labels, epochs: int = 5,
                      batch_size: int = 64, seed: int = 0) -> list[float]:
    """Each mini-batch of current data is extended by as many buffer samples,
    drawn uniformly with replacement; the buffer absorbs the task afterwards.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels):
        clf.ensure_classes(int(labels.max()) + 1)
    bx, by = buffer.arrays()
    log_ = []
    for epoch in range(epochs):
        rng = Rng(derive_seed(seed, epoch))
        order = np.asarray(rng.permutation(len(x)), dtype=np.intp)
        total = 0.0
        for s in range(0, len(x), batch_size):
            idx = order[s:s + batch_size]
            xb, yb = x[idx], labels[idx]
            if len(by):
                pick = np.array([rng.randint(0, len(by) - 1) for _ in idx], dtype=np.intp)
                xb = np.concatenate([xb, bx[pick]])
                yb = np.concatenate([yb, by[pick]])
            total += clf.step(xb, yb) * len(idx)
        log_.append(total / max(len(x), 1))
    buffer.add(labels.tolist(), list(x))
    return log_


def mixed_batch_indices(n_current: int, n_buffer: int, batch_size: int, rng: Rng):
    """Index pairs (current, buffer) for one epoch of mixed replay; exposed for inspection."""
    order = rng.permutation(n_current)
    for s in range(0, n_current, batch_size):
        cur = order[s:s + batch_size]
        buf = [rng.randint(0, n_buffer - 1) for _ in cur] if n_buffer else []
        yield cur, buf


# --------------------------------------------------------------- contrastive


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def _logsumexp(v: np.ndarray) -> float:
    m = v.max()
    return float(m + math.log(np.exp(v - m).sum()))


def contrastive_l1(z_i, zhat_i, batch_z, batch_classes, class_i, tau: float = 0.5) -> float:
    """Pull ``z_i`` to its exemplar, push it from batch members of other classes.

    Returns 0 (and logs a warning) when the batch holds no other class.
    """
    batch_classes = np.asarray(batch_classes)
    neg = [cosine(z_i, zk) / tau for zk, ck in zip(batch_z, batch_classes) if ck != class_i]
    if not neg:
        log.warning("contrastive l1: no negatives in the batch, term set to 0")
        return 0.0
    return -cosine(z_i, zhat_i) / tau + _logsumexp(np.array(neg))


def contrastive_l2(exemplar_z, i: int, tau: float = 0.5) -> float:
    """Push exemplar ``i`` away from the other exemplars of the batch."""
    e = np.asarray(exemplar_z, dtype=np.float64)
    if len(e) < 2:
        raise ValueError("contrastive l2 needs at least two exemplars")
    others = np.array([cosine(e[i], e[k]) / tau for k in range(len(e)) if k != i])
    return -1.0 / tau + _logsumexp(others)


def _normalize(z):
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    return z / norm, norm


def _unnormalize_grad(du, u, norm):
    return (du - (du * u).sum(axis=1, keepdims=True) * u) / norm


def contrastive_batch_loss(z, zhat, exemplar_index, tau: float = 0.5):
    """Batch loss ``sum_i l1(x_i) + l2(x_i)`` and its gradients.

    ``z`` (N, d) are sample embeddings, ``zhat`` (C, d) the embeddings of the
    exemplars of the classes present, ``exemplar_index[i]`` the row of
    ``zhat`` holding sample ``i``'s exemplar. Embeddings need not be unit
    length; similarities are cosines.
    """
    z = np.asarray(z, dtype=np.float64)
    zhat = np.asarray(zhat, dtype=np.float64)
    y = np.asarray(exemplar_index, dtype=np.intp)
    n, c = len(z), len(zhat)
    u, nu = _normalize(z)
    e, ne = _normalize(zhat)
    du = np.zeros_like(u)
    de = np.zeros_like(e)
    loss = 0.0

    s = (u @ u.T) / tau
    neg = y[:, None] != y[None, :]
    for i in range(n):
        if not neg[i].any():
            continue
        v = s[i, neg[i]]
        w = np.exp(v - v.max())
        w /= w.sum()
        loss += -(u[i] @ e[y[i]]) / tau + float(v.max() + math.log(np.exp(v - v.max()).sum()))
        ks = np.nonzero(neg[i])[0]
        du[i] += (w[:, None] * u[ks]).sum(axis=0) / tau
        du[ks] += w[:, None] * u[i] / tau
        du[i] -= e[y[i]] / tau
        de[y[i]] -= u[i] / tau

    if c >= 2:
        q = (e @ e.T) / tau
        counts = np.bincount(y, minlength=c)
        for a in range(c):
            if counts[a] == 0:
                continue
            mask = np.arange(c) != a
            v = q[a, mask]
            w = np.exp(v - v.max())
            w /= w.sum()
            loss += counts[a] * (-1.0 / tau + float(v.max() + math.log(np.exp(v - v.max()).sum())))
            ks = np.nonzero(mask)[0]
            g = counts[a] * w / tau
            de[a] += (g[:, None] * e[ks]).sum(axis=0)
            de[ks] += g[:, None] * e[a]

    return loss, _unnormalize_grad(du, u, nu), _unnormalize_grad(de, e, ne)


class ContrastiveLearner:
    """Encoder trained with the exemplar-anchored contrastive loss; classifies by
    nearest exemplar embedding (cosine)."""

    def __init__(self, sizes=(1024, 256, 64, 32), tau: float = 0.5, seed: int = 0, lr: float = 1e-3):
        self.encoder = MLP(sizes, seed)
        self.state = AdamState(self.encoder.params, lr=lr)
        self.tau = tau

    def embed(self, x) -> np.ndarray:
        return self.encoder.forward(np.asarray(x, dtype=np.float64))

    def loss_and_grad(self, x, labels, exemplars: dict):
        labels = np.asarray(labels, dtype=np.int64)
        classes = sorted(set(labels.tolist()))
        row = {c: k for k, c in enumerate(classes)}
        ex = np.stack([exemplars[c] for c in classes])
        both = np.concatenate([np.asarray(x, dtype=np.float64), ex])
        out, acts = self.encoder.forward(both, keep=True)
        n = len(labels)
        loss, dz, dzh = contrastive_batch_loss(out[:n], out[n:], [row[c] for c in labels], self.tau)
        grads = self.encoder.backward(acts, np.concatenate([dz, dzh]))
        return loss, grads

    def train_task(self, x, labels, exemplars: dict, epochs: int = 5, batch_size: int = 64, seed: int = 0) -> list[float]:
        x = np.asarray(x, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        log_ = []
        for epoch in range(epochs):
            order = np.asarray(Rng(derive_seed(seed, epoch)).permutation(len(x)), dtype=np.intp)
            total = 0.0
            for s in range(0, len(x), batch_size):
                idx = order[s:s + batch_size]
                loss, grads = self.loss_and_grad(x[idx], labels[idx], exemplars)
                adam_step(self.encoder, grads, self.state)
                total += loss
            log_.append(total / max(len(x), 1))
        return log_

    def predict(self, x, exemplars: dict) -> np.ndarray:
        classes = sorted(exemplars)
        e, _ = _normalize(self.embed(np.stack([exemplars[c] for c in classes])))
        u, _ = _normalize(self.embed(x))
        return np.asarray(classes, dtype=np.int64)[np.argmax(u @ e.T, axis=1)]


def contrastive_train_and_eval(learner: ContrastiveLearner, tasks, exemplars: dict, epochs: int = 5,
                               batch_size: int = 64, seed: int = 0) -> list[float]:
    """Train on each task in turn and report accuracy on all tasks so far.

    Each task is ``(x, labels)`` or ``(x, labels, test_x, test_labels)``;
    with a test split, accuracy is measured on the test splits seen so far,
    otherwise on the training data.
    """
    accs = []
    eval_x, eval_y = [], []
    for t, task in enumerate(tasks):
        x, y = task[0], task[1]
        learner.train_task(x, y, exemplars, epochs, batch_size, derive_seed(seed, t))
        ex_x, ex_y = (task[2], task[3]) if len(task) >= 4 else (x, y)
        eval_x.append(np.asarray(ex_x))
        eval_y.append(np.asarray(ex_y))
        ys = np.concatenate(eval_y)
        known = {c: exemplars[c] for c in sorted(set(np.concatenate([ys, np.asarray(y)]).tolist()))}
        pred = learner.predict(np.concatenate(eval_x), known)
        accs.append(float((pred == ys).mean()))
    return accs
