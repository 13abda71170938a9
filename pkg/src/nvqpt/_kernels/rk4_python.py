"""Pure-Python RK4 stepper; algorithmic twin of ``rk4_cython``.

The state is the Bloch coherence vector (x, y, z).  Within one segment the
manifold parameters are constant:

    dx/dt = -omega * y - kappa * x
    dy/dt =  omega * x - d(t) * z - kappa * y
    dz/dt =  d(t) * y

where ``d(t)`` is the instantaneous drive rotation rate about +X summed over
all pulse windows:  d = amp * exp(-(t - c)^2 * q) * cos(w * t + phase)
for t inside [t_lo, t_hi], with ``amp`` in rad/ns.

Keep every arithmetic expression in step with the Cython twin; the backends
are required to agree to near machine precision.
"""

from math import cos, exp


def integrate_segment(
    x,
    y,
    z,
    t0,
    dt,
    n_steps,
    omega,
    kappa,
    pulse_params,
    traj_every=0,
    traj_out=None,
):
    """Advance (x, y, z) by ``n_steps`` RK4 steps of size ``dt`` from ``t0``.

    ``pulse_params`` is a float64 array of shape (n_pulses, 7) with columns
    (amp, center, inv_two_sigma_sq, omega_carrier, phase, t_lo, t_hi).
    When ``traj_every`` > 0, the state at the start of every
    ``traj_every``-th step is written into ``traj_out`` (shape (m, 3)).
    Returns the final state and the number of trajectory rows written.
    """
    pulses = [tuple(row) for row in pulse_params]

    def drive(t):
        d = 0.0
        for amp, center, q, w, phase, t_lo, t_hi in pulses:
            if t_lo <= t <= t_hi:
                u = t - center
                d += amp * exp(-u * u * q) * cos(w * t + phase)
        return d

    half = 0.5 * dt
    sixth = dt / 6.0
    written = 0
    for i in range(n_steps):
        if traj_every > 0 and i % traj_every == 0:
            traj_out[written, 0] = x
            traj_out[written, 1] = y
            traj_out[written, 2] = z
            written += 1
        t = t0 + i * dt

        d1 = drive(t)
        k1x = -omega * y - kappa * x
        k1y = omega * x - d1 * z - kappa * y
        k1z = d1 * y

        tm = t + half
        d2 = drive(tm)
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
        d4 = drive(te)
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
