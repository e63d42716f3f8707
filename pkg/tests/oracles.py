"""Test-side oracles written independently of the package internals."""

import numpy as np


def harmonic_stiffness(h, kappa):
    """Dense 1D Neumann stiffness with harmonic-mean faces, written independently."""
    n = kappa.size
    K = np.zeros((n, n), dtype=kappa.dtype)
    for c in range(n - 1):
        t = 2 * kappa[c] * kappa[c + 1] / (kappa[c] + kappa[c + 1]) / h
        K[c, c] += t
        K[c + 1, c + 1] += t
        K[c, c + 1] -= t
        K[c + 1, c] -= t
    return K


def step_residual(model, labels, u, y, x, t, dt):
    """Residual of one forward step written directly from the scheme (complex-safe)."""
    p = model.params
    vol = model.domain.cell_volume
    h = model.domain.spacing[0]
    K = [harmonic_stiffness(h, u[k][labels]) for k in range(4)]
    g = p.gamma(t + dt)
    n = x.sum(axis=0)
    shape = 0.5 * (1 - np.tanh(0.5 * (n - model.rate.n_crit) / model.rate.width))
    P = model.rate.beta_i0 * shape * x[2] + model.rate.beta_e0 * shape * x[1]
    return np.concatenate([
        vol * (y[0] - x[0]) / dt + vol * P * y[0] + K[0] @ y[0] - vol * g * x[3],
        vol * (y[1] - x[1]) / dt + vol * (p.sigma + p.phi_e) * y[1] + K[1] @ y[1] - vol * P * y[0],
        vol * (y[2] - x[2]) / dt + vol * p.phi_r * y[2] + K[2] @ y[2] - vol * p.sigma * y[1],
        vol * (y[3] - x[3]) / dt + K[3] @ y[3] - vol * p.phi_r * y[2] - vol * p.phi_e * y[1] + vol * g * x[3],
    ])


def complex_jacobian(f, x0):
    x0 = np.asarray(x0, dtype=complex)
    cols = []
    for idx in np.ndindex(*x0.shape):
        x = x0.copy()
        x[idx] += 1e-30j
        cols.append(np.imag(f(x)) / 1e-30)
    return np.array(cols).T


def dense_transpose_system(model, part, u, traj):
    """Stacked step Jacobians for levels 1..K, the control Jacobian and the tracking gradient.

    Every block is built from :func:`step_residual` by complex-step
    differentiation, independently of the package's linearization.
    """
    K, N, dt = traj.timegrid.steps, model.domain.n_cells, traj.dt
    X, times, labels = traj.states, traj.times, part.labels
    m = part.n_regions
    size = 4 * N
    big = np.zeros((K * size, K * size))
    dGdu = np.zeros((K * size, 4 * m))
    for k in range(K):
        res = lambda y, k=k: step_residual(model, labels, u.values, y.reshape(4, N), X[k], times[k], dt)
        big[k * size:(k + 1) * size, k * size:(k + 1) * size] = complex_jacobian(res, X[k + 1]).real
        if k > 0:
            old = lambda x, k=k: step_residual(model, labels, u.values, X[k + 1], x.reshape(4, N), times[k], dt)
            big[k * size:(k + 1) * size, (k - 1) * size:k * size] = complex_jacobian(old, X[k]).real
        ctl = lambda v, k=k: step_residual(model, labels, v.reshape(4, m), X[k + 1], X[k], times[k], dt)
        dGdu[k * size:(k + 1) * size] = complex_jacobian(ctl, u.values).real
    w = traj.timegrid.trapezoid_weights
    chi = part.target.astype(float)
    dJdx = np.zeros((K, 4, N))
    for k in range(1, K + 1):
        for c in (1, 2):
            dJdx[k - 1, c] = w[k] * dt * model.domain.cell_volume * chi * X[k, c]
    return big, dGdu, dJdx.ravel()
