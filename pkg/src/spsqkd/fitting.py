"""Damped least squares (Levenberg-Marquardt) for small dense problems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

_EPS = np.finfo(float).eps


@dataclass
class LMResult:
    x: np.ndarray
    residuals: np.ndarray
    jac: np.ndarray
    n_iter: int
    converged: bool
    message: str

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residuals))

    def covariance(self) -> np.ndarray:
        """Parameter covariance scaled by the reduced chi-square."""
        n, p = self.jac.shape
        dof = max(n - p, 1)
        s2 = float(self.residuals @ self.residuals) / dof
        return np.linalg.pinv(self.jac.T @ self.jac) * s2


def numeric_jacobian(fun, x, f0=None):
    f0 = fun(x) if f0 is None else f0
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = np.sqrt(_EPS) * max(abs(x[j]), 1.0)
        xp = x.copy()
        xp[j] += h
        J[:, j] = (fun(xp) - f0) / h
    return J


def levenberg_marquardt(fun: Callable[[np.ndarray], np.ndarray], x0,
                        jac: Optional[Callable[[np.ndarray], np.ndarray]] = None, *,
                        xtol: float = 1e-8, max_iter: int = 200,
                        lam0: float = 1e-3) -> LMResult:
    """Minimise ``0.5 * ||fun(x)||**2``.

    Marquardt scaling keeps the running maximum of the Jacobian column norms,
    so parameters that stop mattering (e.g. the width of a vanishing peak)
    stay damped.  Converged when an accepted step satisfies
    ``||dx|| <= xtol * (||x|| + xtol)`` or the residual is exactly zero.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(fun(x), dtype=float)
    J = jac(x) if jac is not None else numeric_jacobian(fun, x, r)
    cost = float(r @ r)
    scale = np.maximum(np.sum(J * J, axis=0), _EPS)
    lam = lam0
    p = x.size
    for it in range(1, max_iter + 1):
        if cost == 0.0:
            return LMResult(x, r, J, it - 1, True, "zero residual")
        scale = np.maximum(scale, np.sum(J * J, axis=0))
        while True:
            A = np.vstack([J, np.diag(np.sqrt(lam * scale))])
            b = np.concatenate([-r, np.zeros(p)])
            dx = np.linalg.lstsq(A, b, rcond=None)[0]
            x_new = x + dx
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                break
            lam *= 10.0
            if lam > 1e16:
                # even a vanishing step does not descend: minimum to working precision
                return LMResult(x, r, J, it, True, "no further decrease")
        small = np.linalg.norm(dx) <= xtol * (np.linalg.norm(x_new) + xtol)
        x, r, cost = x_new, r_new, cost_new
        J = jac(x) if jac is not None else numeric_jacobian(fun, x, r)
        lam = max(lam / 10.0, 1e-12)
        if small:
            return LMResult(x, r, J, it, True, "relative step below xtol")
    return LMResult(x, r, J, max_iter, False, "iteration limit reached")
