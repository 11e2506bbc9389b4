"""Online appearance classifier trained during inference.

A two-layer convolutional filter (1x1 channel reduction, then a single
k x k output channel) maps mid-level backbone features to a score map on
the output grid. It is fit to a weighted memory of (features, target map)
pairs by Gauss-Newton: each outer step linearizes the filter around the
current point (fixed relu mask) and solves the regularized normal
equations with conjugate gradient. A backtracking acceptance step keeps
the squared-error objective non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import xavier_uniform


@dataclass
class OnlineFilter:
    """Filter weights; w1: (hidden, c_in, 1, 1), w2: (1, hidden, k, k)."""
    w1: np.ndarray
    w2: np.ndarray
    reg: float = 1e-2

    @property
    def kernel(self) -> int:
        return self.w2.shape[2]

    def copy(self) -> "OnlineFilter":
        return OnlineFilter(self.w1.copy(), self.w2.copy(), self.reg)


@dataclass
class MemorySample:
    features: np.ndarray     # (c_in, Hs, Ws)
    label: np.ndarray        # (Hs, Ws)
    weight: float


@dataclass
class TrainingMemory:
    capacity: int = 50
    samples: list[MemorySample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class CgUpdate:
    """Result of solve_cg: the new filter plus the objective trajectory."""
    filter: OnlineFilter
    objectives: list[float]
    degraded: bool = False


def init_online_filter(rng: np.random.Generator, c_in: int, hidden: int = 64,
                       kernel: int = 4, reg: float = 1e-2) -> OnlineFilter:
    w1 = xavier_uniform(rng, (hidden, c_in, 1, 1))
    w2 = xavier_uniform(rng, (1, hidden, kernel, kernel))
    return OnlineFilter(w1=w1, w2=w2, reg=reg)


def _pad_amounts(kernel: int) -> tuple[int, int]:
    # total pad kernel-1 keeps the output grid equal to the input grid
    return (kernel - 1) // 2, kernel // 2


def _conv_spatial(activations: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """k x k single-output convolution with grid-preserving padding."""
    k = w2.shape[2]
    lo, hi = _pad_amounts(k)
    padded = np.pad(activations, ((0, 0), (lo, hi), (lo, hi)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    return np.einsum("chwuv,cuv->hw", windows, w2[0])


def _conv_spatial_adjoint(grad_map: np.ndarray, w2: np.ndarray,
                          spatial: tuple[int, int]) -> np.ndarray:
    """Adjoint of _conv_spatial with respect to the activations."""
    h, w = spatial
    k = w2.shape[2]
    lo, hi = _pad_amounts(k)
    gpad = np.zeros((w2.shape[1], h + lo + hi, w + lo + hi))
    for du in range(k):
        for dv in range(k):
            gpad[:, du:du + h, dv:dv + w] += w2[0, :, du, dv][:, None, None] * grad_map
    return gpad[:, lo:lo + h, lo:lo + w]


def online_forward(filt: OnlineFilter, features: np.ndarray) -> np.ndarray:
    """Score map for one feature grid; range unconstrained."""
    if features.ndim != 3 or features.shape[0] != filt.w1.shape[1]:
        raise ShapeError(f"features {features.shape} do not match filter "
                         f"input channels {filt.w1.shape[1]}")
    pre = np.einsum("oc,chw->ohw", filt.w1[:, :, 0, 0], features)
    return _conv_spatial(np.maximum(pre, 0.0), filt.w2)


def blend(score: np.ndarray, online_score: np.ndarray, weight: float) -> np.ndarray:
    """weight * offline map + (1 - weight) * online map, elementwise."""
    if score.shape != online_score.shape:
        raise ShapeError(f"blend shapes differ: {score.shape} vs {online_score.shape}")
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"blend weight must be in [0, 1], got {weight}")
    return weight * score + (1.0 - weight) * online_score


def update_memory(memory: TrainingMemory, features: np.ndarray,
                  label: np.ndarray, lr: float = 0.01) -> TrainingMemory:
    """Append a sample with weight lr, decaying and renormalizing the rest."""
    if features.shape[1:] != label.shape:
        raise ShapeError(f"feature grid {features.shape[1:]} vs label {label.shape}")
    for s in memory.samples:
        s.weight *= (1.0 - lr)
    memory.samples.append(MemorySample(features=features.copy(),
                                       label=label.copy(), weight=lr))
    if len(memory.samples) > memory.capacity:
        lowest = min(range(len(memory.samples)),
                     key=lambda i: memory.samples[i].weight)
        memory.samples.pop(lowest)
    total = sum(s.weight for s in memory.samples)
    for s in memory.samples:
        s.weight /= total
    return memory


def conjugate_gradient(matvec, b: np.ndarray, x0: np.ndarray | None = None,
                       n_iters: int = 10, tol: float = 0.0,
                       residual_history: list | None = None) -> np.ndarray:
    """Standard CG for a symmetric positive-definite operator."""
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float(r @ r)
    if residual_history is not None:
        residual_history.append(np.sqrt(rs))
    for _ in range(n_iters):
        if rs <= tol * tol:
            break
        ap = matvec(p)
        denom = float(p @ ap)
        if denom <= 0.0 or not np.isfinite(denom):
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if residual_history is not None:
            residual_history.append(np.sqrt(rs_new))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def objective(filt: OnlineFilter, memory: TrainingMemory) -> float:
    """Weighted squared error over the memory plus the ridge penalty."""
    total = 0.0
    for s in memory.samples:
        r = online_forward(filt, s.features) - s.label
        total += s.weight * float(np.sum(r * r))
    total += filt.reg * (float(np.sum(filt.w1 ** 2)) + float(np.sum(filt.w2 ** 2)))
    return total


def _pack(filt: OnlineFilter, train_w1: bool, train_w2: bool) -> np.ndarray:
    parts = []
    if train_w1:
        parts.append(filt.w1.ravel())
    if train_w2:
        parts.append(filt.w2.ravel())
    return np.concatenate(parts)


def _unpack(theta: np.ndarray, filt: OnlineFilter,
            train_w1: bool, train_w2: bool) -> OnlineFilter:
    out = filt.copy()
    pos = 0
    if train_w1:
        n = out.w1.size
        out.w1 = theta[pos:pos + n].reshape(out.w1.shape).copy()
        pos += n
    if train_w2:
        n = out.w2.size
        out.w2 = theta[pos:pos + n].reshape(out.w2.shape).copy()
        pos += n
    return out


def solve_cg(filt: OnlineFilter, memory: TrainingMemory, n_iters: int,
             gn_steps: int = 1, train_w1: bool = True,
             train_w2: bool = True) -> CgUpdate:
    """Gauss-Newton refinement of the filter against the training memory.

    Each outer step fixes the relu activation pattern, solves the
    regularized normal equations with ``n_iters`` CG iterations, and
    accepts the (possibly backtracked) step only if the true objective
    does not increase. A non-finite intermediate aborts the whole update
    and returns the input filter flagged as degraded.
    """
    if not memory.samples:
        raise ValueError("training memory is empty")
    if n_iters < 1:
        raise ValueError("need at least one CG iteration")

    current = filt.copy()
    objectives = [objective(current, memory)]

    for _ in range(gn_steps):
        lam = current.reg
        w1 = current.w1[:, :, 0, 0]
        states = []
        for s in memory.samples:
            pre = np.einsum("oc,chw->ohw", w1, s.features)
            mask = (pre > 0.0).astype(np.float64)
            act = pre * mask
            residual = _conv_spatial(act, current.w2) - s.label
            states.append((s, mask, act, residual))

        def jvp(sample, mask, act, v1, v2):
            out = np.zeros(sample.label.shape)
            if v1 is not None:
                dact = mask * np.einsum("oc,chw->ohw", v1[:, :, 0, 0], sample.features)
                out += _conv_spatial(dact, current.w2)
            if v2 is not None:
                out += _conv_spatial(act, v2)
            return out

        def vjp(sample, mask, act, u):
            g1 = g2 = None
            if train_w2:
                k = current.kernel
                lo, hi = _pad_amounts(k)
                apad = np.pad(act, ((0, 0), (lo, hi), (lo, hi)))
                windows = np.lib.stride_tricks.sliding_window_view(
                    apad, (k, k), axis=(1, 2))
                g2 = np.einsum("chwuv,hw->cuv", windows, u)[None]
            if train_w1:
                gact = _conv_spatial_adjoint(u, current.w2, sample.label.shape)
                gpre = gact * mask
                g1 = np.einsum("ohw,chw->oc", gpre, sample.features)[:, :, None, None]
            return g1, g2

        def split(vec):
            v1 = v2 = None
            pos = 0
            if train_w1:
                n = current.w1.size
                v1 = vec[pos:pos + n].reshape(current.w1.shape)
                pos += n
            if train_w2:
                n = current.w2.size
                v2 = vec[pos:pos + n].reshape(current.w2.shape)
            return v1, v2

        def join(g1, g2):
            parts = []
            if train_w1:
                parts.append(g1.ravel())
            if train_w2:
                parts.append(g2.ravel())
            return np.concatenate(parts)

        def matvec(vec):
            v1, v2 = split(vec)
            acc = lam * vec
            for sample, mask, act, _ in states:
                t = jvp(sample, mask, act, v1, v2)
                g1, g2 = vjp(sample, mask, act, sample.weight * t)
                acc = acc + join(g1 if train_w1 else None, g2 if train_w2 else None)
            return acc

        theta = _pack(current, train_w1, train_w2)
        grad = lam * theta
        for sample, mask, act, residual in states:
            g1, g2 = vjp(sample, mask, act, sample.weight * residual)
            grad = grad + join(g1 if train_w1 else None, g2 if train_w2 else None)

        delta = conjugate_gradient(matvec, -grad, n_iters=n_iters)
        if not np.all(np.isfinite(delta)):
            return CgUpdate(filter=filt, objectives=objectives, degraded=True)

        accepted = None
        step = 1.0
        for _ in range(5):
            candidate = _unpack(theta + step * delta, current, train_w1, train_w2)
            value = objective(candidate, memory)
            if not np.isfinite(value):
                return CgUpdate(filter=filt, objectives=objectives, degraded=True)
            if value <= objectives[-1]:
                accepted = (candidate, value)
                break
            step *= 0.5
        if accepted is None:
            # deterministic recomputation would reject again; stop early
            break
        current, value = accepted
        objectives.append(value)

    return CgUpdate(filter=current, objectives=objectives, degraded=False)
