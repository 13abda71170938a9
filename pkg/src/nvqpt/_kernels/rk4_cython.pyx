# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled RK4 stepper; algorithmic twin of ``rk4_python``.

See ``rk4_python`` for the equations and the parameter layout.  The two
implementations must perform the same arithmetic in the same order.
"""

from libc.math cimport cos, exp


cdef inline double _drive(double t, const double[:, ::1] p) noexcept nogil:
    cdef double d = 0.0
    cdef double u
    cdef Py_ssize_t j
    for j in range(p.shape[0]):
        if p[j, 5] <= t <= p[j, 6]:
            u = t - p[j, 1]
            d += p[j, 0] * exp(-u * u * p[j, 2]) * cos(p[j, 3] * t + p[j, 4])
    return d


def integrate_segment(
    double x,
    double y,
    double z,
    double t0,
    double dt,
    Py_ssize_t n_steps,
    double omega,
    double kappa,
    const double[:, ::1] pulse_params,
    Py_ssize_t traj_every=0,
    double[:, ::1] traj_out=None,
):
    """Advance (x, y, z) by ``n_steps`` RK4 steps of size ``dt`` from ``t0``.

    Mirrors ``rk4_python.integrate_segment``; returns
    ``(x, y, z, rows_written)``.
    """
    cdef double half = 0.5 * dt
    cdef double sixth = dt / 6.0
    cdef Py_ssize_t written = 0
    cdef Py_ssize_t i
    cdef double t, tm, te
    cdef double d1, d2, d4
    cdef double k1x, k1y, k1z, k2x, k2y, k2z, k3x, k3y, k3z, k4x, k4y, k4z
    cdef double x2, y2, z2, x3, y3, z3, x4, y4, z4

    for i in range(n_steps):
        if traj_every > 0 and i % traj_every == 0:
            traj_out[written, 0] = x
            traj_out[written, 1] = y
            traj_out[written, 2] = z
            written += 1
        t = t0 + i * dt

        d1 = _drive(t, pulse_params)
        k1x = -omega * y - kappa * x
        k1y = omega * x - d1 * z - kappa * y
        k1z = d1 * y

        tm = t + half
        d2 = _drive(tm, pulse_params)
        x2 = x + half * k1x
        y2 = y + half * k1y
        z2 = z + half * k1z
        k2x = -omega * y2 - kappa * x2
        k2y = omega * x2 - d2 * z2 - kappa * y2
        k2z = d2 * y2

        x3 = x + half * k2x
        y3 = y + half * k2y
        z3 = z + half * k2z
        k3x = -omega * y3 - kappa * x3
        k3y = omega * x3 - d2 * z3 - kappa * y3
        k3z = d2 * y3

        te = t + dt
        d4 = _drive(te, pulse_params)
        x4 = x + dt * k3x
        y4 = y + dt * k3y
        z4 = z + dt * k3z
        k4x = -omega * y4 - kappa * x4
        k4y = omega * x4 - d4 * z4 - kappa * y4
        k4z = d4 * y4

        x = x + sixth * (k1x + 2.0 * (k2x + k3x) + k4x)
        y = y + sixth * (k1y + 2.0 * (k2y + k3y) + k4y)
        z = z + sixth * (k1z + 2.0 * (k2z + k3z) + k4z)

    return x, y, z, written
