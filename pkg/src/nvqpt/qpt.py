"""Twelve-measurement single-qubit process tomography.

Four input states (+Z, X, Y, -Z) are each measured along the X, Y and Z spin
axes after the process under study.  Linear inversion of the twelve
expectations gives the raw process matrix (Hermitian but, under noise, often
not positive); a maximum-likelihood fit over the Cholesky-like cone returns
the closest physical process.  Shot-noise error bars come from Poisson
resampling of the photon counts, and the fidelity of the reconstructed
process against the best Z-rotation is tracked versus the readout delay and
extrapolated linearly back to the excitation instant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.optimize

from .errors import ConvergenceError, DatasetError, TimelineError
from .pulses import (
    PhysicsModel,
    PulseSettings,
    Timeline,
    calibrate_pulse,
    evolve,
    exact_counts,
    excitation_event,
    microwave_pulse,
    p0_from_counts,
    p0_sigma_from_counts,
    sample_counts,
)
from .spincore import (
    PAULIS,
    ChiMatrix,
    apply_channel,
    chi_from_ptm,
    density_from_bloch,
    optimize_phi,
)

PREPS = ("+Z", "X", "Y", "-Z")
AXES = ("X", "Y", "Z")

PREP_BLOCH = {
    "+Z": np.array([0.0, 0.0, 1.0]),
    "X": np.array([1.0, 0.0, 0.0]),
    "Y": np.array([0.0, 1.0, 0.0]),
    "-Z": np.array([0.0, 0.0, -1.0]),
}

# Rotation pulses realizing each preparation from |0> and each measurement
# basis change, as (axis label, rotation angle).  None = no pulse.
PREP_PULSES = {
    "+Z": None,
    "X": ("Y", 0.5 * math.pi),
    "Y": ("-X", 0.5 * math.pi),
    "-Z": ("-X", 3.0 * math.pi),
}
MEAS_PULSES = {
    "X": ("Y", 0.5 * math.pi),
    "Y": ("-X", 0.5 * math.pi),
    "Z": None,
}

# Sign mapping the measured |0> population to the spin expectation: a +90
# degree rotation about the listed axis brings the target component onto -Z.
AXIS_SIGN = {"X": -1.0, "Y": -1.0, "Z": 1.0}

TP_PENALTY = 1.0e4
DEFAULT_COUNTS_HI = 1.0e5
DEFAULT_COUNTS_LO = 5.0e4


@dataclass(frozen=True)
class QptEntry:
    prep: str
    axis: str
    expectation: float
    counts_signal: int
    counts_ref_hi: int
    counts_ref_lo: int

    def sigma_expectation(self) -> float:
        return 2.0 * p0_sigma_from_counts(
            self.counts_signal, self.counts_ref_hi, self.counts_ref_lo
        )


@dataclass(frozen=True)
class QptDataset:
    """The complete 4 x 3 grid of spin measurements at one readout delay."""

    t_es_ns: float
    entries: tuple[QptEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def validate(self) -> "QptDataset":
        seen = {(e.prep, e.axis) for e in self.entries}
        wanted = {(p, a) for p in PREPS for a in AXES}
        if len(self.entries) != 12 or seen != wanted:
            missing = sorted(wanted - seen)
            raise DatasetError(f"dataset must hold the 4x3 grid exactly; missing {missing}")
        for e in self.entries:
            # Shot noise can push a normalized expectation slightly past the
            # ideal range; allow the same kind of margin as the fringe data.
            if not -1.1 <= e.expectation <= 1.1:
                raise DatasetError(f"expectation {e.expectation} outside the noise margin")
            if e.counts_ref_hi <= e.counts_ref_lo:
                raise DatasetError("reference counts must satisfy hi > lo")
            p0 = p0_from_counts(e.counts_signal, e.counts_ref_hi, e.counts_ref_lo)
            from_counts = AXIS_SIGN[e.axis] * (2.0 * p0 - 1.0)
            round_tol = 4.0 / (e.counts_ref_hi - e.counts_ref_lo) + 1e-12
            if abs(from_counts - e.expectation) > round_tol:
                raise DatasetError(
                    f"({e.prep},{e.axis}): expectation {e.expectation:.6f} inconsistent "
                    f"with counts ({from_counts:.6f})"
                )
        return self

    def expectation(self, prep: str, axis: str) -> float:
        for e in self.entries:
            if e.prep == prep and e.axis == axis:
                return e.expectation
        raise KeyError((prep, axis))

    def vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Expectations and their shot-noise sigmas in canonical grid order."""
        order = {(e.prep, e.axis): e for e in self.entries}
        e = np.array([order[(p, a)].expectation for p in PREPS for a in AXES])
        s = np.array([order[(p, a)].sigma_expectation() for p in PREPS for a in AXES])
        return e, s

    def to_json_dict(self) -> dict:
        return {
            "t_es_ns": float(self.t_es_ns),
            "entries": [
                {
                    "prep": e.prep,
                    "axis": e.axis,
                    "expectation": float(e.expectation),
                    "counts_signal": int(e.counts_signal),
                    "counts_ref_hi": int(e.counts_ref_hi),
                    "counts_ref_lo": int(e.counts_ref_lo),
                }
                for e in self.entries
            ],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "QptDataset":
        entries = tuple(
            QptEntry(
                prep=e["prep"],
                axis=e["axis"],
                expectation=float(e["expectation"]),
                counts_signal=int(e["counts_signal"]),
                counts_ref_hi=int(e["counts_ref_hi"]),
                counts_ref_lo=int(e["counts_ref_lo"]),
            )
            for e in d["entries"]
        )
        return QptDataset(t_es_ns=float(d["t_es_ns"]), entries=entries).validate()


# ---------------------------------------------------------------------------
# Protocol construction and simulation


def build_protocol(
    t_es_ns: float,
    model: PhysicsModel,
    settings: PulseSettings = PulseSettings(),
    allow_pre_excitation: bool = False,
) -> dict[tuple[str, str], Timeline]:
    """Timelines for all twelve (preparation, axis) combinations.

    Preparation pulses end at the configured spacing before the excitation;
    measurement pulses are centered at ``t_es_ns``.  A measurement pulse
    whose truncated support would contain the excitation instant is refused
    unless ``allow_pre_excitation`` marks an intentional control run.
    """
    if t_es_ns < 0 and not allow_pre_excitation:
        raise TimelineError("t_es < 0 requires the pre-excitation control flag")

    gs_rabi = {
        angle: calibrate_pulse(angle, settings.gs_sigma_ns, model.f_gs_ghz,
                               truncation=settings.truncation)
        for angle in (0.5 * math.pi, 3.0 * math.pi)
    }
    es_rabi = calibrate_pulse(
        0.5 * math.pi, settings.qpt_es_sigma_ns, model.f_es_ghz,
        truncation=settings.truncation,
    )
    prep_center = settings.qpt_prep_end_ns - settings.truncation * settings.gs_sigma_ns

    timelines: dict[tuple[str, str], Timeline] = {}
    for prep in PREPS:
        for axis in AXES:
            events = [excitation_event(0.0)]
            t_start = -1.0
            t_end = max(t_es_ns, 0.0) + settings.pad_ns
            if PREP_PULSES[prep] is not None:
                axis_label, angle = PREP_PULSES[prep]
                pulse = microwave_pulse(
                    prep_center, settings.gs_sigma_ns, model.f_gs_ghz,
                    gs_rabi[angle], axis_label, target_angle_rad=angle,
                    truncation=settings.truncation,
                )
                if pulse.end_ns > 0.0:
                    raise TimelineError("preparation pulse overlaps the excitation")
                events.append(pulse)
                t_start = pulse.start_ns - settings.pad_ns
            if MEAS_PULSES[axis] is not None:
                axis_label, angle = MEAS_PULSES[axis]
                pulse = microwave_pulse(
                    t_es_ns, settings.qpt_es_sigma_ns, model.f_es_ghz,
                    es_rabi, axis_label, target_angle_rad=angle,
                    truncation=settings.truncation,
                    allow_pre_excitation=allow_pre_excitation,
                )
                if pulse.start_ns < 0.0 and not allow_pre_excitation:
                    raise TimelineError(
                        f"measurement pulse at t_es = {t_es_ns} ns overlaps the "
                        "excitation beyond its truncated support"
                    )
                events.append(pulse)
                t_end = pulse.end_ns + settings.pad_ns
                t_start = min(t_start, pulse.start_ns - settings.pad_ns)
            events.sort(key=lambda e: e.center_ns)
            timelines[(prep, axis)] = Timeline(
                events=tuple(events), t_start_ns=t_start, t_end_ns=t_end
            )
    return timelines


def simulate_dataset(
    t_es_ns: float,
    model: PhysicsModel,
    settings: PulseSettings = PulseSettings(),
    counts_hi: float = DEFAULT_COUNTS_HI,
    counts_lo: float = DEFAULT_COUNTS_LO,
    rng: Optional[np.random.Generator] = None,
    dt_ps: float | None = None,
) -> QptDataset:
    """Run the full pulse-level protocol; Poisson noise only when ``rng`` given."""
    timelines = build_protocol(t_es_ns, model, settings)
    rho0 = density_from_bloch((0.0, 0.0, 1.0))
    entries = []
    for prep in PREPS:
        for axis in AXES:
            p0 = evolve(rho0, timelines[(prep, axis)], model, dt_ps=dt_ps).p0
            entries.append(_entry_from_p0(prep, axis, p0, counts_hi, counts_lo, rng))
    return QptDataset(t_es_ns=t_es_ns, entries=tuple(entries)).validate()


def dataset_from_channel(
    chi: ChiMatrix,
    t_es_ns: float = 0.0,
    counts_hi: float = DEFAULT_COUNTS_HI,
    counts_lo: float = DEFAULT_COUNTS_LO,
    rng: Optional[np.random.Generator] = None,
) -> QptDataset:
    """Synthetic dataset for an analytically specified process matrix."""
    entries = []
    for prep in PREPS:
        rho_out = apply_channel(chi, density_from_bloch(PREP_BLOCH[prep]))
        bloch = rho_out.bloch()
        for axis in AXES:
            e = {"X": bloch.x, "Y": bloch.y, "Z": bloch.z}[axis]
            p0 = 0.5 * (1.0 + AXIS_SIGN[axis] * e)
            entries.append(_entry_from_p0(prep, axis, p0, counts_hi, counts_lo, rng))
    return QptDataset(t_es_ns=t_es_ns, entries=tuple(entries)).validate()


def _entry_from_p0(prep, axis, p0, counts_hi, counts_lo, rng) -> QptEntry:
    if rng is None:
        s, h, l = exact_counts(p0, counts_hi, counts_lo)
        expectation = AXIS_SIGN[axis] * (2.0 * p0 - 1.0)
    else:
        s, h, l = sample_counts(p0, counts_hi, counts_lo, rng)
        expectation = AXIS_SIGN[axis] * (2.0 * p0_from_counts(s, h, l) - 1.0)
    return QptEntry(
        prep=prep,
        axis=axis,
        expectation=float(expectation),
        counts_signal=s,
        counts_ref_hi=h,
        counts_ref_lo=l,
    )


def resample_dataset(dataset: QptDataset, rng: np.random.Generator) -> QptDataset:
    """Poisson-resample every count column and renormalize expectations."""
    entries = []
    for e in dataset.entries:
        s = int(rng.poisson(max(e.counts_signal, 0)))
        h = int(rng.poisson(max(e.counts_ref_hi, 1)))
        l = int(rng.poisson(max(e.counts_ref_lo, 0)))
        if h <= l:  # pathological draw at very low counts
            h = l + 1
        expectation = AXIS_SIGN[e.axis] * (2.0 * p0_from_counts(s, h, l) - 1.0)
        entries.append(QptEntry(e.prep, e.axis, float(expectation), s, h, l))
    return QptDataset(t_es_ns=dataset.t_es_ns, entries=tuple(entries))


# ---------------------------------------------------------------------------
# Linear inversion


def expectations_to_chi(dataset: QptDataset) -> ChiMatrix:
    """Direct (unconstrained) inversion of the twelve expectations.

    Output Bloch vectors of the four inputs define the channel's action on
    the operator basis: E(I) and E(Z) from the +-Z pair, E(X) and E(Y) by
    subtracting E(I) from the doubled superposition images.  The result is
    Hermitian by construction but may be non-positive under noise.
    """
    dataset.validate()
    out = {
        prep: np.array([dataset.expectation(prep, a) for a in AXES])
        for prep in PREPS
    }

    def rho_out(bloch):
        return 0.5 * (
            PAULIS[0] + bloch[0] * PAULIS[1] + bloch[1] * PAULIS[2] + bloch[2] * PAULIS[3]
        )

    image_i = rho_out(out["+Z"]) + rho_out(out["-Z"])
    image_x = 2.0 * rho_out(out["X"]) - image_i
    image_y = 2.0 * rho_out(out["Y"]) - image_i
    image_z = rho_out(out["+Z"]) - rho_out(out["-Z"])

    t = np.empty((4, 4))
    for j, image in enumerate((image_i, image_x, image_y, image_z)):
        for i in range(4):
            t[i, j] = np.trace(PAULIS[i] @ image).real / 2.0
    return chi_from_ptm(t)


# ---------------------------------------------------------------------------
# Maximum-likelihood projection


def _measurement_design() -> np.ndarray:
    """Design matrix D (12 x 16): expectations = Re(D @ vec(chi))."""
    rows = []
    for prep in PREPS:
        rho = density_from_bloch(PREP_BLOCH[prep]).matrix
        for axis in AXES:
            sig = PAULIS[AXES.index(axis) + 1]
            m = np.einsum("ab,mbc,cd,nda->mn", sig, PAULIS, rho, PAULIS)
            rows.append(m.reshape(16))
    return np.array(rows)


_DESIGN = _measurement_design()

# Q[(m n) flattened] = P_n @ P_m, for the trace-preservation defect.
_TP_STACK = np.einsum("nij,mjk->mnik", PAULIS, PAULIS).reshape(16, 4)

# One combined contraction for the cost: rows 0..11 predict expectations,
# rows 12..15 give the flattened trace-preservation image.
_COST_MATRIX = np.vstack([_DESIGN, _TP_STACK.T])

_LOWER_IDX = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]
_T_ROWS = np.array([i for i, _ in _LOWER_IDX])
_T_COLS = np.array([j for _, j in _LOWER_IDX])


def _t_from_params(x: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=np.complex128)
    t[np.diag_indices(4)] = x[:4]
    t[_T_ROWS, _T_COLS] = x[4::2] + 1j * x[5::2]
    return t


def _params_from_t(t: np.ndarray) -> np.ndarray:
    x = np.empty(16)
    x[:4] = np.diag(t).real
    for k, (i, j) in enumerate(_LOWER_IDX):
        x[4 + 2 * k] = t[i, j].real
        x[5 + 2 * k] = t[i, j].imag
    return x


def _chi_from_params(x: np.ndarray) -> np.ndarray:
    t = _t_from_params(x)
    chi = t.conj().T @ t
    tr = np.trace(chi).real
    if tr <= 1e-300:
        return np.diag([1.0, 0, 0, 0]).astype(np.complex128)
    return chi / tr


def _lower_factor(chi: np.ndarray) -> np.ndarray:
    """Lower-triangular T with T^dagger T = chi (chi PSD, unit trace)."""
    flipped = chi[::-1, ::-1]
    ridge = 1e-12 * np.eye(4)
    low = np.linalg.cholesky(flipped + ridge)
    return low.conj().T[::-1, ::-1]


def _tp_defect(chi: np.ndarray) -> np.ndarray:
    return (chi.reshape(16) @ _TP_STACK).reshape(2, 2) - np.eye(2)


# Affine trace-preservation projection in the 16-real Hermitian coordinates.


def _hermitian_to_real(chi: np.ndarray) -> np.ndarray:
    x = np.empty(16)
    x[:4] = np.diag(chi).real
    for k, (i, j) in enumerate(_LOWER_IDX):
        x[4 + 2 * k] = chi[i, j].real
        x[5 + 2 * k] = chi[i, j].imag
    return x


def _real_to_hermitian(x: np.ndarray) -> np.ndarray:
    chi = np.zeros((4, 4), dtype=np.complex128)
    chi[np.diag_indices(4)] = x[:4]
    for k, (i, j) in enumerate(_LOWER_IDX):
        chi[i, j] = x[4 + 2 * k] + 1j * x[5 + 2 * k]
        chi[j, i] = x[4 + 2 * k] - 1j * x[5 + 2 * k]
    return chi


def _tp_constraint_system():
    """Rows A, offset b with A @ x = b iff chi(x) is trace preserving."""
    def tp_vec(chi):
        d = _tp_defect(chi)
        return np.array([d[0, 0].real, d[1, 1].real, d[0, 1].real, d[0, 1].imag])

    zero = np.zeros(16)
    b = -tp_vec(_real_to_hermitian(zero))
    a = np.empty((4, 16))
    for i in range(16):
        probe = zero.copy()
        probe[i] = 1.0
        a[:, i] = tp_vec(_real_to_hermitian(probe)) + b
    return a, b


_TP_A, _TP_B = _tp_constraint_system()
_TP_SOLVE = _TP_A.T @ np.linalg.inv(_TP_A @ _TP_A.T)


def _project_physical(chi: np.ndarray, iterations: int = 60) -> np.ndarray:
    """Alternate exact TP projection with PSD clipping until both hold."""
    current = 0.5 * (chi + chi.conj().T)
    for _ in range(iterations):
        x = _hermitian_to_real(current)
        x = x - _TP_SOLVE @ (_TP_A @ x - _TP_B)
        current = _real_to_hermitian(x)
        evals, vecs = np.linalg.eigh(current)
        if evals.min() >= -1e-14:
            break
        current = (vecs * np.clip(evals, 0.0, None)) @ vecs.conj().T
    return current


class MleOutcome(NamedTuple):
    chi: ChiMatrix
    cost: float
    start_cost: float
    n_evaluations: int


def _mle_cost_fn(dataset: QptDataset):
    e_meas, sigma = dataset.vectors()
    inv_sigma = 1.0 / np.maximum(sigma, 1e-6)

    def cost(x: np.ndarray) -> float:
        t = np.zeros((4, 4), dtype=np.complex128)
        t[np.diag_indices(4)] = x[:4]
        t[_T_ROWS, _T_COLS] = x[4::2] + 1j * x[5::2]
        chi = t.conj().T @ t
        tr = chi[0, 0].real + chi[1, 1].real + chi[2, 2].real + chi[3, 3].real
        if tr <= 1e-300:
            return 1e300
        y = _COST_MATRIX @ chi.reshape(16)
        y /= tr
        r = (y[:12].real - e_meas) * inv_sigma
        d00 = y[12] - 1.0
        d11 = y[15] - 1.0
        tp = (
            d00.real * d00.real + d00.imag * d00.imag
            + d11.real * d11.real + d11.imag * d11.imag
            + y[13].real * y[13].real + y[13].imag * y[13].imag
            + y[14].real * y[14].real + y[14].imag * y[14].imag
        )
        return 0.5 * float(r @ r) + TP_PENALTY * tp

    return cost


def mle_project(
    dataset: QptDataset,
    restarts: int = 8,
    seed: int = 0,
    return_details: bool = False,
):
    """Closest physical process matrix to the measured expectations.

    The search parameterizes chi = T^dagger T / Tr(T^dagger T) with a lower
    triangular complex T (16 real parameters) and minimizes the weighted
    squared expectation error plus a quadratic trace-preservation penalty,
    by Nelder-Mead from ``restarts`` seeded starting points (the first is
    the PSD-clipped linear inversion).  The best candidate is polished onto
    the exact TP/PSD intersection, which the returned matrix satisfies at
    the physicality tolerances.
    """
    dataset.validate()
    if restarts < 1:
        raise ValueError("need at least one start")
    cost = _mle_cost_fn(dataset)

    chi_meas = expectations_to_chi(dataset).matrix
    evals, vecs = np.linalg.eigh(chi_meas)
    clipped = (vecs * np.clip(evals, 1e-9, None)) @ vecs.conj().T
    clipped /= np.trace(clipped).real
    x_base = _params_from_t(_lower_factor(clipped))
    start_cost = cost(x_base)

    def search(x, budget):
        got = math.inf
        evals = 0
        for _ in range(2):  # shrink-restart: rebuild the simplex at the optimum
            res = scipy.optimize.minimize(
                cost,
                x,
                method="Nelder-Mead",
                options={"maxfev": budget, "xatol": 1e-9, "fatol": 1e-10, "adaptive": True},
            )
            evals += res.nfev
            x = res.x
            if got - res.fun < 1e-12:
                break
            got = res.fun
        return res.fun, x, evals

    # The linear-inversion start nearly always wins; the remaining seeded
    # starts are cheap probes for a different basin, promoted to a full
    # search only when one of them leads.
    best_cost, best_x, n_eval = search(x_base, 2500)
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    for r in range(1, restarts):
        rng = np.random.default_rng(seeds[r])
        x0 = x_base * (1 + 0.05 * rng.standard_normal(16)) + 0.02 * rng.standard_normal(16)
        cost_r, x_r, evals = search(x0, 600)
        n_eval += evals
        if cost_r < best_cost:
            cost_r, x_r, evals = search(x_r, 2500)
            n_eval += evals
            if cost_r < best_cost:
                best_cost, best_x = cost_r, x_r

    candidates = [best_x, x_base]
    polished = []
    for x in candidates:
        chi = _project_physical(_chi_from_params(x))
        polished.append((cost(_params_from_t(_lower_factor(chi))), chi))
    polished.sort(key=lambda item: item[0])
    final_cost, final_chi = polished[0]

    result = ChiMatrix(final_chi)
    try:
        result.validate_physical()
    except Exception as exc:
        raise ConvergenceError(
            f"maximum-likelihood search returned an unphysical matrix: {exc}",
            payload={"chi": result, "cost": final_cost},
        ) from exc
    if return_details:
        return MleOutcome(result, final_cost, start_cost, n_eval)
    return result


# ---------------------------------------------------------------------------
# Shot-noise Monte Carlo and the fidelity curve


def monte_carlo_errors(
    dataset: QptDataset,
    replicas: int = 200,
    seed: int = 0,
    restarts: int = 8,
) -> tuple[float, float]:
    """Shot-noise standard deviations (sigma_F, sigma_phi_degrees).

    Every replica Poisson-resamples all counts, renormalizes, and reruns
    inversion, the maximum-likelihood projection and the rotation-angle
    optimization.  Replica seeds are spawned independently from ``seed`` so
    results do not depend on execution order.
    """
    if replicas < 100:
        raise ValueError("need at least 100 replicas for stable error bars")
    dataset.validate()
    seeds = np.random.SeedSequence(seed).spawn(replicas)
    fidelities = []
    phis = []
    failures = 0
    for r in range(replicas):
        rng = np.random.default_rng(seeds[r])
        try:
            replica = resample_dataset(dataset, rng)
            chi = mle_project(replica, restarts=restarts, seed=seed + 7919 * (r + 1))
            opt = optimize_phi(chi)
            fidelities.append(opt.fidelity)
            phis.append(opt.phi_rad)
        except (ConvergenceError, DatasetError):
            failures += 1
    if failures > 0.05 * replicas:
        raise ConvergenceError(
            f"{failures}/{replicas} Monte-Carlo replicas failed",
            payload={"fidelities": fidelities, "phis": phis},
        )

    f_arr = np.array(fidelities)
    phi_arr = np.array(phis)
    center = np.median(phi_arr)
    phi_arr = center + np.vectorize(math.remainder)(phi_arr - center, 2.0 * math.pi)
    return float(np.std(f_arr, ddof=1)), float(np.degrees(np.std(phi_arr, ddof=1)))


class FidelityPoint(NamedTuple):
    t_es_ns: float
    fidelity: float
    sigma_f: float
    phi_deg: float
    sigma_phi_deg: float


@dataclass(frozen=True)
class FidelityCurve:
    """Per-delay process fidelity and rotation angle, with a linear guide."""

    points: tuple[FidelityPoint, ...]
    intercept: float
    intercept_sigma: float
    slope_per_ns: float
    phi_slope_deg_per_ns: float
    phi_intercept_deg: float

    def to_json_dict(self) -> dict:
        return {
            "points": [
                {
                    "t_es_ns": p.t_es_ns,
                    "F": p.fidelity,
                    "sigma_F": p.sigma_f,
                    "phi_deg": p.phi_deg,
                    "sigma_phi_deg": p.sigma_phi_deg,
                }
                for p in self.points
            ],
            "intercept_F0": self.intercept,
            "intercept_sigma": self.intercept_sigma,
            "slope_per_ns": self.slope_per_ns,
            "phi_slope_deg_per_ns": self.phi_slope_deg_per_ns,
            "phi_intercept_deg": self.phi_intercept_deg,
            "extrapolation": "error-weighted straight line; heuristic guide, not a decay model",
        }


def _weighted_line(x: np.ndarray, y: np.ndarray, sigma: np.ndarray):
    """Weighted least-squares line fit: returns slope, intercept, sigma_intercept."""
    w = np.ones_like(x) if np.all(sigma <= 0) else 1.0 / np.maximum(sigma, 1e-12) ** 2
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    var_intercept = 1.0 / sw + xm * xm / sxx
    if np.all(sigma <= 0):
        dof = max(len(x) - 2, 1)
        resid = y - (intercept + slope * x)
        var_intercept *= float(w @ resid**2) / dof
    return float(slope), float(intercept), math.sqrt(var_intercept)


def unwrap_phases_deg(
    t_es_ns: np.ndarray,
    phi_deg: np.ndarray,
    slope_hint_deg_per_ns: float | None = None,
) -> np.ndarray:
    """Unwrap modulo-360 phases along increasing delay.

    Without a hint the nearest-branch rule applies (valid when successive
    true steps stay below 180 degrees); with a slope hint each step is
    unwrapped to the branch nearest the hinted advance, which handles
    sparse grids where the phase aliases.
    """
    out = np.array(phi_deg, dtype=float)
    for i in range(1, len(out)):
        expected = 0.0
        if slope_hint_deg_per_ns is not None:
            expected = slope_hint_deg_per_ns * (t_es_ns[i] - t_es_ns[i - 1])
        step = out[i] - out[i - 1]
        out[i] = out[i - 1] + expected + math.remainder(step - expected, 360.0)
    return out


def fidelity_curve(
    datasets: Sequence[QptDataset],
    mc_replicas: int = 0,
    seed: int = 0,
    restarts: int = 8,
    phi_slope_hint_deg_per_ns: float | None = None,
) -> FidelityCurve:
    """Reconstruct every dataset and extrapolate F linearly to zero delay.

    With ``mc_replicas`` > 0 each point carries Monte-Carlo shot-noise error
    bars which also weight the straight-line extrapolation; otherwise the
    fit is unweighted.  The rotation angle is unwrapped versus delay (see
    :func:`unwrap_phases_deg`) and fitted by the same weighted line.
    """
    if len(datasets) < 2:
        raise ValueError("extrapolation needs at least two distinct delays")
    ordered = sorted(datasets, key=lambda d: d.t_es_ns)
    t = np.array([d.t_es_ns for d in ordered])
    if np.any(np.diff(t) <= 0):
        raise ValueError("datasets must have distinct t_es values")

    points = []
    for i, dataset in enumerate(ordered):
        chi = mle_project(dataset, restarts=restarts, seed=seed + 104729 * i)
        opt = optimize_phi(chi)
        sigma_f = 0.0
        sigma_phi = 0.0
        if mc_replicas:
            sigma_f, sigma_phi = monte_carlo_errors(
                dataset, replicas=mc_replicas, seed=seed + 15485863 * (i + 1),
                restarts=restarts,
            )
        points.append(
            FidelityPoint(
                t_es_ns=float(dataset.t_es_ns),
                fidelity=float(opt.fidelity),
                sigma_f=float(sigma_f),
                phi_deg=math.degrees(opt.phi_rad),
                sigma_phi_deg=float(sigma_phi),
            )
        )

    f = np.array([p.fidelity for p in points])
    sf = np.array([p.sigma_f for p in points])
    slope, intercept, intercept_sigma = _weighted_line(t, f, sf)

    phi = unwrap_phases_deg(
        t, np.array([p.phi_deg for p in points]), phi_slope_hint_deg_per_ns
    )
    sphi = np.array([p.sigma_phi_deg for p in points])
    phi_slope, phi_intercept, _ = _weighted_line(t, phi, sphi)

    return FidelityCurve(
        points=tuple(points),
        intercept=intercept,
        intercept_sigma=intercept_sigma,
        slope_per_ns=slope,
        phi_slope_deg_per_ns=phi_slope,
        phi_intercept_deg=phi_intercept,
    )


def chi_report_dict(
    chi: ChiMatrix,
    phi_deg: float,
    fidelity: float,
    sigma_f: float,
    sigma_phi_deg: float,
    seed: int,
) -> dict:
    """Serialized process matrix plus its rotation-angle analysis."""
    d = chi.to_json_dict()
    d.update(
        {
            "phi_star_deg": float(phi_deg),
            "F": float(fidelity),
            "sigma_F": float(sigma_f),
            "sigma_phi_deg": float(sigma_phi_deg),
            "seed": int(seed),
        }
    )
    return d
