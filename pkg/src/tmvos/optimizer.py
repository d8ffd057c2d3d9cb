"""Gauss-Newton / Conjugate-Gradient minimization of the weighted target loss.

The loss over the sample memory is

    L(w) = sum_k gamma_k ||v_k . (y_k - U(D(x_k; w)))||^2
           + lambda1 ||w1||^2 + lambda2 ||w2||^2

with gamma_k the normalized sample weights, v_k the pixel weight masks and
U bilinear upsampling from score resolution to label resolution (labels are
kept at full image resolution by default). Each GN step linearizes the
residuals jointly in the free parameters and solves the regularized normal
equations matrix-free with CG, using only the convolution/upsampling kernels
and their adjoints. All solver arithmetic is float64; model weights and
sample payloads stay float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .memory import SampleMemory, normalized_weights
from .ops import (
    ConvKernel,
    DimensionError,
    conv2d_adjoint_raw,
    conv2d_raw,
    kernel_grad_raw,
    upsample_matrix,
)
from .target_model import TargetWeights

FREE_BOTH = "both"
FREE_W2 = "w2"


class NumericalError(ArithmeticError):
    """Raised when the solver produces non-finite intermediate values."""


@dataclass
class OptimizerSchedule:
    """Iteration counts and regularization of the GN/CG solver.

    ``n_cg_first`` applies to the first GN step of an initialization (the
    weights are still random there), ``n_cg`` to the remaining steps and
    ``n_cg_update`` to online updates. ``label_stride`` > 1 optionally
    downsamples the stored full-resolution labels to save time.
    """

    n_gn: int = 5
    n_cg_first: int = 5
    n_cg: int = 10
    n_cg_update: int = 10
    lambda1: float = 1e-3
    lambda2: float = 1e-3
    cg_residual_tol: float = 1e-6
    kappa_min: float = 0.1
    label_stride: int = 1

    def __post_init__(self):
        if min(self.n_gn, self.n_cg_first, self.n_cg, self.n_cg_update) < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization factors must be >= 0")
        if self.cg_residual_tol <= 0:
            raise ValueError("cg_residual_tol must be > 0")
        if not 0.0 < self.kappa_min < 1.0:
            raise ValueError("kappa_min must be in (0, 1)")
        if self.label_stride < 1:
            raise ValueError("label_stride must be >= 1")


SCHEDULE_PRESETS = {
    "default": OptimizerSchedule(n_gn=5, n_cg_first=5, n_cg=10, n_cg_update=10),
    "fast": OptimizerSchedule(n_gn=4, n_cg_first=5, n_cg=10, n_cg_update=5),
}


def schedule_preset(name: str, **overrides) -> OptimizerSchedule:
    if name not in SCHEDULE_PRESETS:
        raise ValueError(f"unknown schedule preset {name!r}")
    return replace(SCHEDULE_PRESETS[name], **overrides)


def cg_iteration_plan(sched: OptimizerSchedule, mode: str) -> list[int]:
    """CG iteration counts per GN step for the given optimization mode."""
    if mode == "initial":
        return [sched.n_cg_first] + [sched.n_cg] * (sched.n_gn - 1)
    if mode == "update":
        return [sched.n_cg_update]
    raise ValueError(f"unknown mode {mode!r}")


def pixel_weight_mask(y: np.ndarray, kappa_min: float = 0.1) -> np.ndarray:
    """Per-pixel loss weights balancing target and background influence.

    Target pixels receive kappa/kappa_hat and background pixels
    (1 - kappa)/(1 - kappa_hat), where kappa_hat is the target fraction of
    the mask and kappa = max(kappa_min, kappa_hat). The weighted target
    influence (summed target weight over total weight) then equals kappa.
    """
    if not 0.0 < kappa_min < 1.0:
        raise ValueError(f"kappa_min must be in (0, 1), got {kappa_min}")
    y = np.asarray(y) > 0
    n = y.size
    if n == 0:
        raise ValueError("empty label mask")
    nt = int(np.count_nonzero(y))
    khat = nt / n
    kappa = max(kappa_min, khat)
    out = np.empty(y.shape, dtype=np.float64)
    if nt == n:
        out.fill(kappa / khat)
    elif nt == 0:
        out.fill(1.0 - kappa)
    else:
        out[y] = kappa / khat
        out[~y] = (1.0 - kappa) / (1.0 - khat)
    return out


def _pack(parts) -> np.ndarray:
    return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])


class _Sample(NamedTuple):
    x: np.ndarray       # (C, hs, ws) float32 features
    z: np.ndarray       # (c, hs, ws) float64 compressed features w1 * x
    vstar: np.ndarray   # sqrt(gamma) * pixel weights, label resolution
    vstar2: np.ndarray
    ur: np.ndarray      # cropped row/column upsampling operators
    uc: np.ndarray
    resid: np.ndarray   # vstar * (y - U(D(x)))


class _LsqProblem:
    """Matrix-free normal equations of the loss at a fixed linearization point."""

    def __init__(self, w: TargetWeights, mem: SampleMemory, sched: OptimizerSchedule,
                 free_set: str):
        if free_set not in (FREE_BOTH, FREE_W2):
            raise ValueError(f"unknown free set {free_set!r}")
        self.free_set = free_set
        self.sched = sched
        self.w1 = w.w1.data.astype(np.float64)
        self.w2 = w.w2.data.astype(np.float64)
        self.shapes = [self.w1.shape, self.w2.shape] if free_set == FREE_BOTH else [self.w2.shape]
        self.sizes = [int(np.prod(s)) for s in self.shapes]

        ls = sched.label_stride
        self.samples = []
        for entry, gamma in zip(mem.entries, normalized_weights(mem)):
            x = entry.features.data
            if x.shape[0] != self.w1.shape[1]:
                raise DimensionError(
                    f"sample has {x.shape[0]} channels, w1 expects {self.w1.shape[1]}"
                )
            stride = entry.features.stride
            if stride % ls:
                raise DimensionError(f"feature stride {stride} not divisible by label stride {ls}")
            factor = stride // ls
            y = entry.labels[::ls, ::ls]
            hs, ws = x.shape[1:]
            hl, wl = y.shape
            if hs * factor < hl or ws * factor < wl:
                raise DimensionError(
                    f"scores of {hs}x{ws} cells at stride {stride} do not cover "
                    f"{hl}x{wl} labels at stride {ls}"
                )
            ur = upsample_matrix(hs, factor)[:hl]
            uc = upsample_matrix(ws, factor)[:wl]
            vstar = math.sqrt(gamma) * pixel_weight_mask(y, sched.kappa_min)
            z = conv2d_raw(x, self.w1)  # float64 via dtype promotion
            pred = conv2d_raw(z, self.w2)[0]
            resid = vstar * (y.astype(np.float64) - ur @ pred @ uc.T)
            self.samples.append(_Sample(x, z, vstar, vstar * vstar, ur, uc, resid))

    def _unpack(self, vec: np.ndarray):
        parts, off = [], 0
        for shape, size in zip(self.shapes, self.sizes):
            parts.append(vec[off:off + size].reshape(shape))
            off += size
        if self.free_set == FREE_BOTH:
            return parts[0], parts[1]
        return None, parts[0]

    def loss(self) -> float:
        data = sum(float(np.vdot(s.resid, s.resid)) for s in self.samples)
        reg = self.sched.lambda1 * float(np.vdot(self.w1, self.w1))
        reg += self.sched.lambda2 * float(np.vdot(self.w2, self.w2))
        return data + reg

    def _grad_parts(self, fields):
        """Apply the transposed Jacobian chain to per-sample label-space fields.

        ``fields`` must already carry one factor of vstar; the remaining
        chain is U^T followed by the two convolution adjoints.
        """
        g1 = np.zeros_like(self.w1) if self.free_set == FREE_BOTH else None
        g2 = np.zeros_like(self.w2)
        for s, field in zip(self.samples, fields):
            a = (s.ur.T @ field @ s.uc)[None]
            g2 += kernel_grad_raw(s.z, a, self.w2.shape)
            if g1 is not None:
                back = conv2d_adjoint_raw(a, self.w2)
                g1 += kernel_grad_raw(s.x, back, self.w1.shape)
        return g1, g2

    def rhs(self) -> np.ndarray:
        """Right-hand side J^T r - lambda w of the normal equations at dw = 0."""
        g1, g2 = self._grad_parts([s.vstar * s.resid for s in self.samples])
        g2 -= self.sched.lambda2 * self.w2
        if self.free_set == FREE_BOTH:
            g1 -= self.sched.lambda1 * self.w1
            return _pack([g1, g2])
        return _pack([g2])

    def apply_normal(self, vec: np.ndarray) -> np.ndarray:
        """Apply J^T J + lambda to a packed parameter increment."""
        dw1, dw2 = self._unpack(np.asarray(vec, dtype=np.float64))
        fields = []
        for s in self.samples:
            u = conv2d_raw(s.z, dw2)[0]
            if dw1 is not None:
                u = u + conv2d_raw(conv2d_raw(s.x, dw1), self.w2)[0]
            fields.append(s.vstar2 * (s.ur @ u @ s.uc.T))
        g1, g2 = self._grad_parts(fields)
        g2 += self.sched.lambda2 * dw2
        if self.free_set == FREE_BOTH:
            g1 += self.sched.lambda1 * dw1
            return _pack([g1, g2])
        return _pack([g2])

    def updated_weights(self, delta: np.ndarray) -> TargetWeights:
        dw1, dw2 = self._unpack(delta)
        w1 = self.w1 + dw1 if dw1 is not None else self.w1
        return TargetWeights(
            ConvKernel(w1.astype(np.float32)),
            ConvKernel((self.w2 + dw2).astype(np.float32)),
        )


def compute_loss(w: TargetWeights, mem: SampleMemory, sched: OptimizerSchedule) -> float:
    """Evaluate the full weighted, regularized L2 loss."""
    return _LsqProblem(w, mem, sched, FREE_W2).loss()


def normal_operator_apply(dw, w: TargetWeights, mem: SampleMemory,
                          sched: OptimizerSchedule, free_set: str):
    """Apply the GN normal operator J^T J + lambda to an increment.

    ``dw`` is (dw1, dw2) for the joint free set or a single w2-shaped array
    (or (None, dw2)) when only w2 is free; the result has the same form.
    """
    problem = _LsqProblem(w, mem, sched, free_set)
    bare = not isinstance(dw, (tuple, list))
    if bare:
        dw = (None, dw)
    dw1, dw2 = dw
    if free_set == FREE_BOTH:
        if dw1 is None:
            raise DimensionError("joint free set requires both increments")
        parts = [dw1, dw2]
    else:
        parts = [dw2]
    for part, shape in zip(parts, problem.shapes):
        if np.shape(part) != shape:
            raise DimensionError(f"increment shape {np.shape(part)} does not match {shape}")
    out = problem.apply_normal(_pack(parts))
    o1, o2 = problem._unpack(out)
    if bare:
        return o2
    return (o1, o2)


def cg_solve(apply_a, b: np.ndarray, max_iters: int, tol: float) -> np.ndarray:
    """Conjugate gradients from a zero initial guess.

    Stops after ``max_iters`` iterations or once the relative residual
    ||b - A x|| / ||b|| drops below ``tol``, and returns the iterate.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    rs = float(r @ r)
    b_norm = math.sqrt(rs)
    if b_norm == 0.0:
        return x
    p = r.copy()
    for i in range(max_iters):
        ap = np.asarray(apply_a(p), dtype=np.float64)
        pap = float(p @ ap)
        if not math.isfinite(pap):
            raise NumericalError(f"non-finite curvature in CG at iteration {i}")
        if pap <= 0.0:
            # operator is only PSD along p; the current iterate is the best here
            break
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if not math.isfinite(rs_new):
            raise NumericalError(f"non-finite residual in CG at iteration {i}")
        if math.sqrt(rs_new) < tol * b_norm:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def gn_step(w: TargetWeights, mem: SampleMemory, sched: OptimizerSchedule,
            n_cg: int, free_set: str = FREE_BOTH) -> TargetWeights:
    """One Gauss-Newton step: linearize, solve the normal equations, update."""
    problem = _LsqProblem(w, mem, sched, free_set)
    delta = cg_solve(problem.apply_normal, problem.rhs(), n_cg, sched.cg_residual_tol)
    return problem.updated_weights(delta)


def optimize(w: TargetWeights, mem: SampleMemory, sched: OptimizerSchedule,
             free_set: str = FREE_BOTH, mode: str | None = None) -> TargetWeights:
    """Run the scheduled GN iterations.

    Initialization mode runs n_gn steps (n_cg_first CG iterations in the
    first, n_cg in the rest); update mode runs a single step with
    n_cg_update iterations. By default the mode follows the free set:
    w2-only optimization is an online update.
    """
    if mode is None:
        mode = "update" if free_set == FREE_W2 else "initial"
    for n_cg in cg_iteration_plan(sched, mode):
        w = gn_step(w, mem, sched, n_cg, free_set)
    return w
