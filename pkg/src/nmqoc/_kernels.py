"""Compiled fixed-step RK4 sweeps for the memory functions and propagators.

Vectorization order is (ee, eg, ge, gg). The generator has only five nonzero
entries, so products with it are written out explicitly instead of forming
the dense 4x4 matrix.

Every sweep returns -1 on success or the index of the step at which the
blow-up threshold was crossed.
"""

import numpy as np
from numba import njit

_OPTS = dict(cache=True, nogil=True)


@njit(**_OPTS)
def memory_rhs(omega, p, q, f, out):
    """dF_j/dt = p_j + F_j (q_j + i omega + sum_{k!=j} F_k) + F_j**2."""
    total = 0j
    for j in range(f.shape[0]):
        total += f[j]
    for j in range(f.shape[0]):
        out[j] = p[j] + f[j] * (q[j] + 1j * omega + total)
    return total


@njit(**_OPTS)
def apply_generator(omega, ftot, x, out):
    decay = 2.0 * ftot.real
    eg = -1j * omega - np.conj(ftot)
    ge = 1j * omega - ftot
    for c in range(4):
        out[0, c] = -decay * x[0, c]
        out[1, c] = eg * x[1, c]
        out[2, c] = ge * x[2, c]
        out[3, c] = decay * x[0, c]


@njit(**_OPTS)
def apply_generator_adjoint(omega, ftot, x, out):
    decay = 2.0 * ftot.real
    eg = 1j * omega - ftot
    ge = -1j * omega - np.conj(ftot)
    for c in range(4):
        out[0, c] = decay * (x[3, c] - x[0, c])
        out[1, c] = eg * x[1, c]
        out[2, c] = ge * x[2, c]
        out[3, c] = 0.0


@njit(**_OPTS)
def control_overlap(chi, g):
    """2 Re Tr[chi^dagger D G] with D = diag(0, -i, +i, 0)."""
    acc = 0j
    for c in range(4):
        acc += np.conj(chi[1, c]) * (-1j) * g[1, c]
        acc += np.conj(chi[2, c]) * (1j) * g[2, c]
    return 2.0 * acc.real


@njit(**_OPTS)
def _rk4_step(omega, dt, p, q, f, g, f_next, g_next, stage_f):
    k = f.shape[0]
    kf1 = np.empty(k, np.complex128)
    kf2 = np.empty(k, np.complex128)
    kf3 = np.empty(k, np.complex128)
    kf4 = np.empty(k, np.complex128)
    kg1 = np.empty((4, 4), np.complex128)
    kg2 = np.empty((4, 4), np.complex128)
    kg3 = np.empty((4, 4), np.complex128)
    kg4 = np.empty((4, 4), np.complex128)
    ft = np.empty(k, np.complex128)
    gt = np.empty((4, 4), np.complex128)

    s1 = memory_rhs(omega, p, q, f, kf1)
    apply_generator(omega, s1, g, kg1)
    for j in range(k):
        ft[j] = f[j] + 0.5 * dt * kf1[j]
    gt[:, :] = g + 0.5 * dt * kg1
    s2 = memory_rhs(omega, p, q, ft, kf2)
    apply_generator(omega, s2, gt, kg2)
    for j in range(k):
        ft[j] = f[j] + 0.5 * dt * kf2[j]
    gt[:, :] = g + 0.5 * dt * kg2
    s3 = memory_rhs(omega, p, q, ft, kf3)
    apply_generator(omega, s3, gt, kg3)
    for j in range(k):
        ft[j] = f[j] + dt * kf3[j]
    gt[:, :] = g + dt * kg3
    s4 = memory_rhs(omega, p, q, ft, kf4)
    apply_generator(omega, s4, gt, kg4)

    for j in range(k):
        f_next[j] = f[j] + dt / 6.0 * (kf1[j] + 2.0 * kf2[j] + 2.0 * kf3[j] + kf4[j])
    g_next[:, :] = g + dt / 6.0 * (kg1 + 2.0 * kg2 + 2.0 * kg3 + kg4)
    stage_f[0] = s1
    stage_f[1] = s2
    stage_f[2] = s3
    stage_f[3] = s4


@njit(**_OPTS)
def _diverged(f, g, blowup):
    for j in range(f.shape[0]):
        a = abs(f[j])
        if not a <= blowup:
            return True
    for r in range(4):
        for c in range(4):
            a = abs(g[r, c])
            if not a <= blowup:
                return True
    return False


@njit(**_OPTS)
def forward_sweep(eps, dt, omega0, p, q, blowup, f_out, stage_out, g_out):
    n = eps.shape[0]
    k = p.shape[0]
    for j in range(k):
        f_out[0, j] = 0.0
    g_out[0, :, :] = 0.0
    for r in range(4):
        g_out[0, r, r] = 1.0
    for step in range(n):
        _rk4_step(omega0 + eps[step], dt, p, q, f_out[step], g_out[step],
                  f_out[step + 1], g_out[step + 1], stage_out[step])
        if _diverged(f_out[step + 1], g_out[step + 1], blowup):
            return step
    return -1


@njit(**_OPTS)
def backward_sweep(eps, dt, omega0, stage_f, chi_tf, blowup, chi_out):
    """Integrate chi' = -Lambda^dagger chi from t_f down to 0.

    Stage generators are taken from the forward pass in reverse order, which
    makes each step the exact adjoint of the corresponding forward RK4 step.
    """
    n = eps.shape[0]
    chi_out[n, :, :] = chi_tf
    k1 = np.empty((4, 4), np.complex128)
    k2 = np.empty((4, 4), np.complex128)
    k3 = np.empty((4, 4), np.complex128)
    k4 = np.empty((4, 4), np.complex128)
    xt = np.empty((4, 4), np.complex128)
    for step in range(n - 1, -1, -1):
        omega = omega0 + eps[step]
        x = chi_out[step + 1]
        apply_generator_adjoint(omega, stage_f[step, 3], x, k1)
        xt[:, :] = x + 0.5 * dt * k1
        apply_generator_adjoint(omega, stage_f[step, 2], xt, k2)
        xt[:, :] = x + 0.5 * dt * k2
        apply_generator_adjoint(omega, stage_f[step, 1], xt, k3)
        xt[:, :] = x + dt * k3
        apply_generator_adjoint(omega, stage_f[step, 0], xt, k4)
        chi_out[step, :, :] = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        for r in range(4):
            for c in range(4):
                a = abs(chi_out[step, r, c])
                if not a <= blowup:
                    return step
    return -1


@njit(**_OPTS)
def update_sweep(eps_old, chi, lam, lower, upper, dt, omega0, p, q, blowup,
                 eps_new, f_out, stage_out, g_out):
    """Forward sweep that updates the control point by point before stepping."""
    n = eps_old.shape[0]
    k = p.shape[0]
    for j in range(k):
        f_out[0, j] = 0.0
    g_out[0, :, :] = 0.0
    for r in range(4):
        g_out[0, r, r] = 1.0
    for step in range(n):
        e = eps_old[step] + lam * control_overlap(chi[step], g_out[step])
        if e < lower:
            e = lower
        elif e > upper:
            e = upper
        eps_new[step] = e
        _rk4_step(omega0 + e, dt, p, q, f_out[step], g_out[step],
                  f_out[step + 1], g_out[step + 1], stage_out[step])
        if _diverged(f_out[step + 1], g_out[step + 1], blowup):
            return step
    return -1


@njit(**_OPTS)
def _memory_costate_rhs(omega, q, f, mu, chi, g, out):
    """Backward-time derivative -dmu/dt of the memory-function costates.

    Returns nu = sum_j conj(mu_j) F_j, from which the implicit part of the
    control gradient follows as 2 Re(i nu).
    """
    k = f.shape[0]
    total = 0j
    nu = 0j
    for j in range(k):
        total += f[j]
        nu += np.conj(mu[j]) * f[j]
    a = 0j
    b1 = 0j
    b2 = 0j
    for c in range(4):
        a += (np.conj(chi[3, c]) - np.conj(chi[0, c])) * g[0, c]
        b1 += np.conj(chi[1, c]) * g[1, c]
        b2 += np.conj(chi[2, c]) * g[2, c]
    w = 2.0 * a.real - np.conj(b1) - b2
    src = np.conj(nu) + np.conj(w)
    for j in range(k):
        out[j] = np.conj(q[j] + 1j * omega + total) * mu[j] + src
    return nu


@njit(**_OPTS)
def backward_sweep_full(eps, dt, omega0, q, f_grid, stage_f, g_grid, chi_tf, blowup,
                        chi_out, mu_out):
    """Co-integrate chi and the memory costates mu backward from t_f.

    chi follows exactly the same steps as ``backward_sweep``. Mid-step values of
    F and G needed by mu are the averages of the neighbouring grid values.
    """
    n = eps.shape[0]
    kk = q.shape[0]
    chi_out[n, :, :] = chi_tf
    for j in range(kk):
        mu_out[n, j] = 0.0
    c1 = np.empty((4, 4), np.complex128)
    c2 = np.empty((4, 4), np.complex128)
    c3 = np.empty((4, 4), np.complex128)
    c4 = np.empty((4, 4), np.complex128)
    xt = np.empty((4, 4), np.complex128)
    m1 = np.empty(kk, np.complex128)
    m2 = np.empty(kk, np.complex128)
    m3 = np.empty(kk, np.complex128)
    m4 = np.empty(kk, np.complex128)
    mt = np.empty(kk, np.complex128)
    f_mid = np.empty(kk, np.complex128)
    g_mid = np.empty((4, 4), np.complex128)
    for step in range(n - 1, -1, -1):
        omega = omega0 + eps[step]
        x = chi_out[step + 1]
        m = mu_out[step + 1]
        for j in range(kk):
            f_mid[j] = 0.5 * (f_grid[step, j] + f_grid[step + 1, j])
        g_mid[:, :] = 0.5 * (g_grid[step] + g_grid[step + 1])

        apply_generator_adjoint(omega, stage_f[step, 3], x, c1)
        _memory_costate_rhs(omega, q, f_grid[step + 1], m, x, g_grid[step + 1], m1)
        xt[:, :] = x + 0.5 * dt * c1
        for j in range(kk):
            mt[j] = m[j] + 0.5 * dt * m1[j]
        apply_generator_adjoint(omega, stage_f[step, 2], xt, c2)
        _memory_costate_rhs(omega, q, f_mid, mt, xt, g_mid, m2)
        xt[:, :] = x + 0.5 * dt * c2
        for j in range(kk):
            mt[j] = m[j] + 0.5 * dt * m2[j]
        apply_generator_adjoint(omega, stage_f[step, 1], xt, c3)
        _memory_costate_rhs(omega, q, f_mid, mt, xt, g_mid, m3)
        xt[:, :] = x + dt * c3
        for j in range(kk):
            mt[j] = m[j] + dt * m3[j]
        apply_generator_adjoint(omega, stage_f[step, 0], xt, c4)
        _memory_costate_rhs(omega, q, f_grid[step], mt, xt, g_grid[step], m4)

        chi_out[step, :, :] = x + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        for j in range(kk):
            mu_out[step, j] = m[j] + dt / 6.0 * (m1[j] + 2.0 * m2[j] + 2.0 * m3[j] + m4[j])
            if not abs(mu_out[step, j]) <= blowup:
                return step
        for r in range(4):
            for c in range(4):
                if not abs(chi_out[step, r, c]) <= blowup:
                    return step
    return -1


@njit(**_OPTS)
def memory_overlap(mu, f):
    """Implicit gradient part 2 Re(i sum_j conj(mu_j) F_j)."""
    nu = 0j
    for j in range(f.shape[0]):
        nu += np.conj(mu[j]) * f[j]
    return -2.0 * nu.imag


@njit(**_OPTS)
def update_sweep_full(eps_old, chi, mu, lam, lower, upper, dt, omega0, p, q, blowup,
                      eps_new, f_out, stage_out, g_out):
    """Same as ``update_sweep`` with the memory-function gradient added."""
    n = eps_old.shape[0]
    k = p.shape[0]
    for j in range(k):
        f_out[0, j] = 0.0
    g_out[0, :, :] = 0.0
    for r in range(4):
        g_out[0, r, r] = 1.0
    for step in range(n):
        grad = control_overlap(chi[step], g_out[step]) + memory_overlap(mu[step], f_out[step])
        e = eps_old[step] + lam * grad
        if e < lower:
            e = lower
        elif e > upper:
            e = upper
        eps_new[step] = e
        _rk4_step(omega0 + e, dt, p, q, f_out[step], g_out[step],
                  f_out[step + 1], g_out[step + 1], stage_out[step])
        if _diverged(f_out[step + 1], g_out[step + 1], blowup):
            return step
    return -1
