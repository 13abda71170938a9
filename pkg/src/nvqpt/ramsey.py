"""Lab-frame Ramsey fringes across the excitation event, and their fit.

The fringe is p0 versus the readout-pulse delay.  Because the readout pulse
replays the same waveform shifted in time while the spin phase is pinned to
the excitation instant, the fringe oscillates at the excited-state Larmor
frequency itself, rising where the pulse crosses the excitation and decaying
with the excited-state coherence time.

The phenomenological model fitted here is

    p0(t) = 0.5 + (A/2) T(t) E(t) cos(2 pi f t + phi0)

with turn-on T(t) = (1 + erf((t - t0)/w)) / 2 and envelope
E(t) = exp(-(t - t0)/tau*) for t >= t0, 1 before.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.ndimage
import scipy.optimize
import scipy.special

from .errors import ConvergenceError
from .pulses import (
    PhysicsModel,
    PulseSettings,
    Timeline,
    calibrate_pulse,
    evolve,
    excitation_event,
    microwave_pulse,
    p0_from_counts,
    p0_sigma_from_counts,
    sample_counts,
)
from .spincore import density_from_bloch

TWO_PI = 2.0 * math.pi

PARAM_NAMES = ("amplitude", "tau_star_ns", "t0_ns", "f_ghz", "phi0_rad", "turnon_width_ns")


@dataclass(frozen=True)
class FringeSeries:
    """Measured or simulated fringe points (t_es, p0, sigma_p0)."""

    t_es_ns: np.ndarray
    p0: np.ndarray
    sigma_p0: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_es_ns, dtype=float)
        p = np.asarray(self.p0, dtype=float)
        s = np.asarray(self.sigma_p0, dtype=float)
        if not (t.shape == p.shape == s.shape) or t.ndim != 1:
            raise ValueError("fringe columns must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("t_es must be strictly increasing")
        if np.any(p < -0.2) or np.any(p > 1.2):
            raise ValueError("p0 outside the [-0.2, 1.2] normalization margin")
        if np.any(s < 0):
            raise ValueError("sigma_p0 must be non-negative")
        for name, arr in (("t_es_ns", t), ("p0", p), ("sigma_p0", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.t_es_ns)


@dataclass(frozen=True)
class RamseyFit:
    """Fitted fringe parameters with 1-sigma errors and covariance."""

    amplitude: float
    tau_star_ns: float
    t0_ns: float
    f_ghz: float
    phi0_rad: float
    turnon_width_ns: float
    sigmas: np.ndarray          # 1-sigma errors, PARAM_NAMES order
    covariance: np.ndarray      # 6x6, PARAM_NAMES order
    reduced_chisq: float
    degenerate: bool = False

    def __post_init__(self):
        if self.tau_star_ns <= 0:
            raise ValueError("fitted tau* must be positive")
        if not -1e-9 <= self.amplitude <= 1.05:
            raise ValueError(f"fitted amplitude {self.amplitude:.4f} outside [0, 1.05]")

    @property
    def values(self) -> np.ndarray:
        return np.array(
            [
                self.amplitude,
                self.tau_star_ns,
                self.t0_ns,
                self.f_ghz,
                self.phi0_rad,
                self.turnon_width_ns,
            ]
        )

    def report_dict(self) -> dict:
        return {
            "model": "0.5 + (A/2) * turnon(t) * decay(t) * cos(2 pi f t + phi0)",
            "parameters": [
                {"name": n, "value": float(v), "sigma": float(s)}
                for n, v, s in zip(PARAM_NAMES, self.values, self.sigmas)
            ],
            "covariance_row_major": [float(v) for v in self.covariance.reshape(-1)],
            "reduced_chisq": float(self.reduced_chisq),
            "degenerate": bool(self.degenerate),
        }


def fringe_model(t, amplitude, tau_star_ns, t0_ns, f_ghz, phi0_rad, turnon_width_ns):
    """Evaluate the phenomenological fringe model on an array of delays."""
    t = np.asarray(t, dtype=float)
    u = t - t0_ns
    turnon = 0.5 * (1.0 + scipy.special.erf(u / turnon_width_ns))
    envelope = np.where(u >= 0, np.exp(-np.clip(u, 0.0, None) / tau_star_ns), 1.0)
    return 0.5 + 0.5 * amplitude * turnon * envelope * np.cos(TWO_PI * f_ghz * t + phi0_rad)


def ramsey_timeline(
    t_es_ns: float,
    model: PhysicsModel,
    settings: PulseSettings = PulseSettings(),
) -> Timeline:
    """Prep pi/2 in the GS, excitation at t = 0, readout pi/2 at ``t_es``."""
    prep = microwave_pulse(
        settings.ramsey_prep_center_ns,
        settings.gs_sigma_ns,
        model.f_gs_ghz,
        calibrate_pulse(math.pi / 2, settings.gs_sigma_ns, model.f_gs_ghz,
                        truncation=settings.truncation),
        "Y",
        target_angle_rad=math.pi / 2,
        truncation=settings.truncation,
    )
    meas = microwave_pulse(
        t_es_ns,
        settings.ramsey_es_sigma_ns,
        model.f_es_ghz,
        calibrate_pulse(math.pi / 2, settings.ramsey_es_sigma_ns, model.f_es_ghz,
                        truncation=settings.truncation),
        "Y",
        target_angle_rad=math.pi / 2,
        truncation=settings.truncation,
        allow_pre_excitation=True,
    )
    excitation = excitation_event(0.0)
    events = tuple(sorted((prep, excitation, meas), key=lambda e: e.center_ns))
    return Timeline(
        events=events,
        t_start_ns=prep.start_ns - settings.pad_ns,
        t_end_ns=max(meas.end_ns, 0.0) + settings.pad_ns,
    )


def simulate_fringe(
    grid_ns: Sequence[float],
    model: PhysicsModel,
    settings: PulseSettings = PulseSettings(),
    dt_ps: float | None = None,
) -> FringeSeries:
    """Noise-free fringe from the full pulse-level simulation.

    ``grid_ns`` must be strictly increasing and stay within [-5, 25] ns of
    the excitation.  Shot noise, when wanted, is layered on afterwards with
    :func:`with_counts_noise`.
    """
    grid = np.asarray(list(grid_ns), dtype=float)
    if grid.size == 0:
        raise ValueError("empty fringe grid")
    if np.any(grid < -5.0) or np.any(grid > 25.0):
        raise ValueError("fringe grid must stay within [-5, 25] ns of the excitation")
    rho0 = density_from_bloch((0.0, 0.0, 1.0))
    p0 = np.empty_like(grid)
    for i, t_es in enumerate(grid):
        timeline = ramsey_timeline(float(t_es), model, settings)
        p0[i] = evolve(rho0, timeline, model, dt_ps=dt_ps).p0
    return FringeSeries(t_es_ns=grid, p0=p0, sigma_p0=np.zeros_like(grid))


def with_counts_noise(
    series: FringeSeries,
    counts_hi: float,
    counts_lo: float,
    rng: np.random.Generator,
) -> FringeSeries:
    """Replace each point by its Poisson photon-count estimate."""
    p0 = np.empty(len(series))
    sigma = np.empty(len(series))
    for i, p in enumerate(series.p0):
        s, h, l = sample_counts(float(p), counts_hi, counts_lo, rng)
        p0[i] = p0_from_counts(s, h, l)
        sigma[i] = p0_sigma_from_counts(s, h, l)
    return FringeSeries(t_es_ns=series.t_es_ns, p0=np.clip(p0, -0.2, 1.2), sigma_p0=sigma)


def _initial_guess(t, p):
    y = p - 0.5
    dt = float(np.median(np.diff(t)))

    # Fringe frequency from the zero-padded periodogram peak.
    padded = 1 << max(10, int(np.ceil(np.log2(len(y) * 16))))
    spectrum = np.abs(np.fft.rfft(y - y.mean(), n=padded))
    freqs = np.fft.rfftfreq(padded, d=dt)
    f = float(freqs[1 + int(np.argmax(spectrum[1:]))])

    # Envelope from a rolling maximum over roughly one fringe period.
    window = max(3, int(round(1.0 / max(f, 1e-6) / dt)))
    envelope = scipy.ndimage.maximum_filter1d(np.abs(y), size=window)
    peak = float(envelope.max())
    if peak < 1e-12:
        return np.array([0.0, 5.0, float(t[0]), max(f, 1e-3), 0.0, 0.3])

    # Turn-on location: first crossing of half the peak envelope.
    above = np.nonzero(envelope >= 0.5 * peak)[0]
    t0 = float(t[above[0]]) if above.size else float(t[0])

    # Decay time from the log-envelope slope past the turn-on.
    sel = (t > t0 + 0.5) & (envelope > 0.05 * peak)
    if np.count_nonzero(sel) >= 3:
        slope = np.polyfit(t[sel], np.log(envelope[sel]), 1)[0]
        tau = -1.0 / slope if slope < -1e-6 else 5.0
    else:
        tau = 5.0
    tau = float(np.clip(tau, 0.3, 100.0))

    # Phase by projecting the decayed region onto the fringe quadratures.
    sel = t >= t0
    c = float(np.sum(y[sel] * np.cos(TWO_PI * f * t[sel])))
    s = float(np.sum(y[sel] * np.sin(TWO_PI * f * t[sel])))
    phi0 = math.atan2(-s, c)

    amplitude = min(2.0 * peak, 1.0)
    return np.array([amplitude, tau, t0, f, phi0, 0.3])


def _normalize_params(params):
    """Fold sign/phase ambiguities into the canonical A >= 0, f > 0 branch."""
    a, tau, t0, f, phi0, w = params
    if f < 0:
        f, phi0 = -f, -phi0
    if a < 0:
        a, phi0 = -a, phi0 + math.pi
    if w < 0:
        w = -w
    phi0 = math.remainder(phi0, TWO_PI)
    return np.array([a, tau, t0, f, phi0, w])


def fit_fringe(
    series: FringeSeries,
    initial_guess: Optional[Sequence[float]] = None,
) -> RamseyFit:
    """Weighted least-squares fit of the phenomenological fringe model.

    Levenberg-Marquardt with a numerically differenced Jacobian, falling
    back to a simplex search if LM fails.  Requires at least 40 points
    spanning two decay constants of the (estimated) envelope.
    """
    t = series.t_es_ns
    p = series.p0
    if len(series) < 40:
        raise ValueError(f"need at least 40 fringe points, got {len(series)}")

    x0 = np.asarray(initial_guess, dtype=float) if initial_guess is not None else _initial_guess(t, p)
    # Span precondition: a visible fringe must cover two decay constants.
    # Data without a significant fringe (amplitude guess ~ 0) is exempt and
    # handled by the degenerate-fit path instead.
    if x0[0] >= 0.08 and t[-1] - max(t[0], x0[2]) < 2.0 * x0[1]:
        raise ValueError(
            f"fringe span {t[-1] - t[0]:.1f} ns covers less than two decay "
            f"constants (tau* estimate {x0[1]:.1f} ns)"
        )

    weighted = bool(np.any(series.sigma_p0 > 0))
    sigma = np.where(series.sigma_p0 > 0, series.sigma_p0, 1.0)

    def residuals(params):
        return (fringe_model(t, *params) - p) / sigma

    n_params = len(PARAM_NAMES)
    result = None
    try:
        result = scipy.optimize.least_squares(
            residuals, x0, method="lm", xtol=1e-8, ftol=1e-12, gtol=1e-12,
            max_nfev=2000 * (n_params + 1),
        )
    except Exception:
        result = None

    if result is None or not result.success:
        # Simplex fallback on the scalar cost, then a polishing LM pass.
        def cost(params):
            r = residuals(params)
            return float(r @ r)

        start = result.x if result is not None else x0
        nm = scipy.optimize.minimize(
            cost, start, method="Nelder-Mead",
            options={"maxiter": 20000, "xatol": 1e-10, "fatol": 1e-12},
        )
        if not nm.success:
            raise ConvergenceError("fringe fit did not converge", payload=nm)
        result = scipy.optimize.least_squares(
            residuals, nm.x, method="lm", xtol=1e-8, max_nfev=2000 * (n_params + 1)
        )

    params = _normalize_params(result.x)
    dof = max(len(series) - n_params, 1)
    chisq = float(result.fun @ result.fun)
    reduced = chisq / dof

    jtj = result.jac.T @ result.jac
    degenerate = False
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
        degenerate = True
    if not weighted:
        cov = cov * reduced
    sigmas = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    if not np.all(np.isfinite(cov)):
        degenerate = True

    return RamseyFit(
        amplitude=float(params[0]),
        tau_star_ns=float(params[1]),
        t0_ns=float(params[2]),
        f_ghz=float(params[3]),
        phi0_rad=float(params[4]),
        turnon_width_ns=float(params[5]),
        sigmas=sigmas,
        covariance=cov,
        reduced_chisq=reduced,
        degenerate=degenerate,
    )


def amplitude_at_excitation(fit: RamseyFit, t_exc_ns: float = 0.0) -> tuple[float, float]:
    """Fitted envelope extrapolated to the (known) excitation instant.

    The fit parameter ``amplitude`` is anchored at the fitted turn-on time
    t0, which the erf approximation of the rise places slightly early; the
    decay-law value at the true excitation time, A exp((t0 - t_exc)/tau*),
    is pinned by the fringe tail and free of that bias.  The 1-sigma error
    is propagated through the (A, tau*, t0) covariance block.
    """
    u = (fit.t0_ns - t_exc_ns) / fit.tau_star_ns
    scale = math.exp(u)
    value = fit.amplitude * scale
    grad = np.zeros(len(PARAM_NAMES))
    grad[0] = scale
    grad[1] = -value * u / fit.tau_star_ns
    grad[2] = value / fit.tau_star_ns
    var = float(grad @ fit.covariance @ grad)
    return value, math.sqrt(max(var, 0.0))


def fidelity_from_amplitude(
    fit: RamseyFit,
    t_exc_ns: float | None = None,
) -> tuple[float, float]:
    """State-preservation fidelity estimate F = (1 + A)/2 and its error.

    By default A is the fit's amplitude parameter.  Passing ``t_exc_ns``
    uses the envelope extrapolated to that instant instead (see
    :func:`amplitude_at_excitation`).
    """
    if t_exc_ns is None:
        a, sigma_a = fit.amplitude, float(fit.sigmas[0])
    else:
        a, sigma_a = amplitude_at_excitation(fit, t_exc_ns)
    return 0.5 * (1.0 + a), 0.5 * sigma_a


def write_fringe_csv(path, series: FringeSeries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t_es_ns,p0,sigma_p0\n")
        for t, p, s in zip(series.t_es_ns, series.p0, series.sigma_p0):
            fh.write(f"{float(t)!r},{float(p)!r},{float(s)!r}\n")


def read_fringe_csv(path) -> FringeSeries:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return FringeSeries(t_es_ns=data[:, 0], p0=data[:, 1], sigma_p0=data[:, 2])
