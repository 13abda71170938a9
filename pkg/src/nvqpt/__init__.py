"""Desk-scale simulator and analysis toolkit for lab-frame Ramsey
interferometry and single-qubit process tomography across an instantaneous
orbital excitation."""

from ._kernels import backend_name
from .spincore import (
    BlochVector,
    ChiMatrix,
    DensityMatrix,
    apply_channel,
    chi_from_kraus,
    chi_from_ptm,
    chi_ideal,
    density_from_bloch,
    optimize_phi,
    process_fidelity,
    ptm_from_chi,
)
from .pulses import (
    PhysicsModel,
    PulseEvent,
    SimOutcome,
    Timeline,
    calibrate_pulse,
    evolve,
    excitation_event,
    excite,
    microwave_pulse,
    readout,
)

__version__ = "0.1.0"

__all__ = [
    "BlochVector",
    "ChiMatrix",
    "DensityMatrix",
    "PhysicsModel",
    "PulseEvent",
    "SimOutcome",
    "Timeline",
    "apply_channel",
    "backend_name",
    "calibrate_pulse",
    "chi_from_kraus",
    "chi_from_ptm",
    "chi_ideal",
    "density_from_bloch",
    "evolve",
    "excitation_event",
    "excite",
    "microwave_pulse",
    "optimize_phi",
    "process_fidelity",
    "ptm_from_chi",
    "readout",
    "__version__",
]
