"""
Krylov solvers on plain numpy arrays: conjugate gradients and preconditioned MINRES.

Both return the iterate and an info dict with keys niter, success, res_norm
(relative) and, for MINRES, breakdown.
"""

from typing import Callable, Dict, Optional, Tuple

import numpy as np
from loguru import logger

Operator = Callable[[np.ndarray], np.ndarray]


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.vdot(a.ravel(), b.ravel()))


def conjugate_gradient(apply: Operator, b: np.ndarray, x0: Optional[np.ndarray] = None, *,
                       tol: float = 1e-3, maxiter: int = 2000,
                       fixed_iterations: Optional[int] = None,
                       pc: Optional[Operator] = None) -> Tuple[np.ndarray, Dict]:
    """
    (Preconditioned) CG for a symmetric positive definite operator.

    Stops when |r_k| <= tol |r_0|, or after exactly fixed_iterations steps when given.
    """
    x = np.zeros_like(b, dtype=float) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x)
    r0 = np.sqrt(_dot(r, r))
    if r0 == 0.0:
        return x, {"niter": 0, "success": True, "res_norm": 0.0}
    s = pc(r) if pc is not None else r.copy()
    p = s.copy()
    am = _dot(s, r)
    limit = fixed_iterations or maxiter
    nrm = r0
    k = 0
    for k in range(1, limit + 1):
        v = apply(p)
        pv = _dot(p, v)
        if pv <= 0.0:
            logger.warning(f"CG: non-positive curvature {pv:.3e} at iteration {k}")
            break
        alpha = am / pv
        x += alpha * p
        r -= alpha * v
        nrm = np.sqrt(_dot(r, r))
        if fixed_iterations is None and nrm <= tol * r0:
            break
        s = pc(r) if pc is not None else r
        am1 = _dot(s, r)
        p = s + (am1 / am) * p
        am = am1
    rel = nrm / r0
    return x, {"niter": k, "success": bool(fixed_iterations is not None or rel <= tol), "res_norm": rel}


def preconditioned_minres(apply: Operator, b: np.ndarray, x0: np.ndarray, pc: Operator, *,
                          tol: float = 1e-8, maxiter: int = 500,
                          fixed_iterations: Optional[int] = None,
                          residual_norm: Optional[Callable[[np.ndarray], float]] = None,
                          callback: Optional[Callable[[int, np.ndarray, float], None]] = None
                          ) -> Tuple[np.ndarray, Dict]:
    """
    MINRES with a symmetric positive definite preconditioner (short recurrences, no restarts).

    With residual_norm the stopping test uses that explicit norm relative to its value at
    x0; otherwise the preconditioned residual estimate |eta| / gamma_1.
    callback(k, x, rel) runs after every iteration.
    """
    x = np.array(x0, dtype=float)
    v = b - apply(x)
    z = pc(v)
    gamma2 = _dot(z, v)
    info = {"niter": 0, "success": False, "res_norm": 1.0, "breakdown": False}
    if gamma2 < 0.0:
        logger.warning("MINRES: preconditioner is not positive definite")
        info["breakdown"] = True
        return x, info
    gamma = np.sqrt(gamma2)
    base = residual_norm(x) if residual_norm is not None else gamma
    if gamma == 0.0 or base == 0.0:
        info.update(success=True, res_norm=0.0)
        return x, info

    v_old = np.zeros_like(v)
    w = np.zeros_like(v)
    w_old = np.zeros_like(v)
    gamma_old = 1.0
    eta = gamma
    s_old = s = 0.0
    c_old = c = 1.0
    rel = 1.0
    limit = fixed_iterations or maxiter

    for k in range(1, limit + 1):
        z = z / gamma
        Kz = apply(z)
        delta = _dot(Kz, z)
        v_new = Kz - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = pc(v_new)
        gamma2_new = _dot(z_new, v_new)
        if gamma2_new < 0.0:
            logger.warning(f"MINRES breakdown at iteration {k}: indefinite preconditioner")
            info.update(niter=k - 1, breakdown=True, res_norm=rel)
            return x, info
        gamma_new = np.sqrt(gamma2_new)

        a0 = c * delta - c_old * s * gamma
        a1 = np.sqrt(a0 * a0 + gamma_new * gamma_new)
        a2 = s * delta + c_old * c * gamma
        a3 = s_old * gamma
        c_new, s_new = a0 / a1, gamma_new / a1

        w_new = (z - a3 * w_old - a2 * w) / a1
        x += c_new * eta * w_new
        eta = -s_new * eta

        rel = residual_norm(x) / base if residual_norm is not None else abs(eta) / base
        info.update(niter=k, res_norm=rel)
        if callback is not None:
            callback(k, x, rel)
        if fixed_iterations is None and rel <= tol:
            info["success"] = True
            return x, info
        if gamma_new == 0.0:
            info["success"] = True
            return x, info

        v_old, v = v, v_new
        z = z_new
        w_old, w = w, w_new
        gamma_old, gamma = gamma, gamma_new
        s_old, s = s, s_new
        c_old, c = c, c_new

    if fixed_iterations is not None:
        info["success"] = True
    return x, info
