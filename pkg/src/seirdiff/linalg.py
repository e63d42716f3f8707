"""Jacobi-preconditioned conjugate gradients for the SPD systems of the time stepper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SolverError


@dataclass(frozen=True)
class SolverOptions:
    rtol: float = 1e-12
    maxiter: int = 2000


DEFAULT_SOLVER = SolverOptions()


def pcg(A: sp.spmatrix, b: np.ndarray, x0: np.ndarray | None = None,
        rtol: float = 1e-12, maxiter: int = 2000) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Iterates until ``||b - A x|| <= rtol * ||b||``. A zero right-hand side
    returns the zero vector without iterating.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    target = rtol * bnorm
    rnorm = np.linalg.norm(r)
    if rnorm <= target:
        return x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            # recompute the true residual once; the recursive one drifts
            r_true = b - A @ x
            rnorm = np.linalg.norm(r_true)
            if rnorm <= target:
                return x
            r = r_true
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        "conjugate gradient did not converge",
        {"iterations": maxiter, "residual": float(rnorm / bnorm), "rtol": rtol,
         "size": b.size},
    )
