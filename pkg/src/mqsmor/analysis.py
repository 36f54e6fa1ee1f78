"""Frequency- and time-domain analysis of the full and reduced models.

The full transfer function is evaluated as H(s) = -s B_r^T (s E_r - A_r)^{-1}
B_r + R^{-1} through complex shifted solves; time integration is implicit
Euler with the output reconstructed from the backward difference,
y_k = -B_r^T (x_k - x_{k-1}) / h + R^{-1} u_k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mor import ReducedModel
from .ops import OperatorContext


def transfer_full(ctx: OperatorContext, omega: float):
    """H(i omega) of the regularized system; the omega = 0 limit is R^{-1}."""
    rinv = ctx.rsys.Rinv
    if omega == 0:
        return rinv.astype(complex)
    s = 1j * float(omega)
    zb = ctx.shifted_solve(-s, ctx.B_r)       # solves (-s E + A) z = B
    return s * (ctx.B_r.T @ zb) + rinv


def transfer_reduced(model: ReducedModel, omega: float):
    """H~(i omega) = C (i omega I - A)^{-1} B of the reduced model."""
    s = 1j * float(omega)
    ell = model.A.shape[0]
    x = np.linalg.solve(s * np.eye(ell) - model.A, model.B.astype(complex))
    return model.C @ x


@dataclass
class FrequencyResponse:
    omegas: np.ndarray
    H_full: np.ndarray      # (n_omega, m, m) complex
    H_reduced: np.ndarray
    abs_error: np.ndarray   # spectral norm of the difference per omega

    def magnitude_full(self):
        return np.array([np.linalg.norm(h, 2) for h in self.H_full])

    def magnitude_reduced(self):
        return np.array([np.linalg.norm(h, 2) for h in self.H_reduced])


def frequency_response(ctx, model, omegas) -> FrequencyResponse:
    omegas = np.asarray(omegas, dtype=float)
    hf = np.array([transfer_full(ctx, w) for w in omegas])
    hr = np.array([transfer_reduced(model, w) for w in omegas])
    err = np.array([np.linalg.norm(a - b, 2) for a, b in zip(hf, hr)])
    return FrequencyResponse(omegas, hf, hr, err)


def _sample_input(u, t, m):
    uk = np.atleast_1d(np.asarray(u(float(t)), dtype=float))
    if uk.shape != (m,):
        raise ValueError(f"input must return {m} components")
    return uk


def simulate(system, u, t_final, steps, x0=None):
    """Implicit Euler on [0, t_final]; returns (t, y) with y row per time point.

    ``system`` is either an OperatorContext (full model, output from the
    backward difference of the state) or a ReducedModel (y = C x).
    """
    if steps < 1 or t_final <= 0:
        raise ValueError("need steps >= 1 and t_final > 0")
    h = t_final / steps
    t = np.linspace(0.0, t_final, steps + 1)
    if isinstance(system, OperatorContext):
        return t, _simulate_full(system, u, t, h, x0)
    return t, _simulate_reduced(system, u, t, h, x0)


def _simulate_full(ctx, u, t, h, x0):
    r = ctx.rsys
    m = r.m
    x = np.zeros(r.n_r) if x0 is None else np.asarray(x0, dtype=float)
    rinv = r.Rinv
    y = np.empty((t.shape[0], m))
    y[0] = rinv @ _sample_input(u, t[0], m)
    for k in range(1, t.shape[0]):
        uk = _sample_input(u, t[k], m)
        rhs = r.apply_Er(x) + h * (ctx.B_r @ uk)
        # (E - h A) x_new = rhs  <=>  ((-1/h) E + A) x_new = -rhs / h
        x_new = ctx.shifted_solve(-1.0 / h, -rhs / h)
        y[k] = -ctx.B_r.T @ (x_new - x) / h + rinv @ uk
        x = x_new
    return y


def _simulate_reduced(model, u, t, h, x0):
    ell, m = model.A.shape[0], model.m
    x = np.zeros(ell) if x0 is None else np.asarray(x0, dtype=float)
    lu = scipy.linalg.lu_factor(np.eye(ell) - h * model.A)
    y = np.empty((t.shape[0], m))
    y[0] = model.C @ x
    for k in range(1, t.shape[0]):
        uk = _sample_input(u, t[k], m)
        x = scipy.linalg.lu_solve(lu, x + h * (model.B @ uk))
        y[k] = model.C @ x
    return y


@dataclass
class SimulationResult:
    t: np.ndarray
    u: np.ndarray
    y_full: np.ndarray
    y_reduced: np.ndarray
    rel_error: np.ndarray   # |y - y~| / max_t |y|

    @property
    def max_rel_error(self):
        return float(self.rel_error.max())


def simulate_compare(ctx, model, u, t_final, steps, x0=None) -> SimulationResult:
    t, y = simulate(ctx, u, t_final, steps, x0=x0)
    _, yr = simulate(model, u, t_final, steps)
    m = ctx.rsys.m
    us = np.array([_sample_input(u, tk, m) for tk in t])
    scale = np.linalg.norm(y, axis=1).max()
    rel = np.linalg.norm(y - yr, axis=1) / max(scale, 1e-300)
    return SimulationResult(t, us, y, yr, rel)


def passivity_scan(h_eval, n_samples=50, seed=7, re_range=(1e-3, 1e4), im_max=1e6):
    """Sample H(s) + H(s)^* over the open right half-plane.

    Half the samples come from a deterministic log grid in Re(s) with a few
    imaginary offsets, half are random.  Reports the worst eigenvalue margin
    relative to ||H(s)||.
    """
    rng = np.random.default_rng(seed)
    n_grid = n_samples // 2
    res = np.geomspace(re_range[0], re_range[1], max(n_grid, 1))
    ims = np.array([0.0, 1e2, -1e4, 1e6])
    pts = [complex(r, ims[i % ims.size]) for i, r in enumerate(res)]
    while len(pts) < n_samples:
        r = 10 ** rng.uniform(np.log10(re_range[0]), np.log10(re_range[1]))
        pts.append(complex(r, rng.uniform(-im_max, im_max)))
    margins = []
    for s in pts:
        h = np.atleast_2d(h_eval(s))
        herm = h + h.conj().T
        lam_min = float(np.linalg.eigvalsh(herm).min())
        margins.append(lam_min / max(np.linalg.norm(h, 2), 1e-300))
    margins = np.array(margins)
    return {
        "samples": len(pts),
        "min_margin_rel": float(margins.min()),
        "pass": bool(margins.min() >= -1e-10),
    }


def transfer_eval_full(ctx):
    """Callable s -> H(s) for the full model at general complex s, Re(s) > 0."""
    def h(s):
        s = complex(s)
        zb = ctx.shifted_solve(-s, ctx.B_r)
        return s * (ctx.B_r.T @ zb) + ctx.rsys.Rinv
    return h


def transfer_eval_reduced(model):
    def h(s):
        s = complex(s)
        ell = model.A.shape[0]
        x = np.linalg.solve(s * np.eye(ell) - model.A, model.B.astype(complex))
        return model.C @ x
    return h
