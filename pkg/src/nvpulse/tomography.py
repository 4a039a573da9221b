"""Density-matrix tomography of the working register and the fidelity metric.

Measurement model (fixed and used consistently for simulation and
inversion): the optical channel sees the total m_S = 0 population
P0 = p3 + p4. Driving a pi pulse on a transition before reading P0 gives
a signal difference linear in the populations,

    I_A = P0(rho) - P0(piA rho)           = p3 - p1
    I_B = P0(rho) - P0(piB rho)           = p4 - p2
    I_C = P0(piA rho) - P0(piA piC rho)   = p1 - p2
    I_D = P0(piA rho) - P0(piA piD rho)   = p4 - p3

(the nuclear lines are mapped through the electron line A, double-resonance
style). Together with the unit trace this is a full-rank linear system for
the four populations. All raw intensities are normalized to the
A-transition intensity of the initialized reference state |00><00|, which
fixes the overall optical gain.

Off-diagonal elements are read from the two quadratures of a pi/2 pulse on
the corresponding transition; one- and two-quantum coherences are first
converted to a directly measurable pair by a selective pi pulse, and the
deterministic coherence damping accrued during the conversion pulse is
divided out.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linops import InvariantViolation, dag, nearest_psd
from .pulses import (DensityMatrix, NoiseParams, PulseSpec, apply_pulse_with_noise,
                     evolve, pulse_propagator)
from .spinmodel import TRANSITION_CHANNELS, TRANSITION_PAIRS, EnergyLevels, TransitionTable

#: level pairs measurable directly (they are driven transitions)
DIRECT_PAIRS = {(1, 3): "A", (2, 4): "B", (1, 2): "C", (3, 4): "D"}
#: conversion pulse and resulting directly-measurable pair for the rest
CONVERSION = {(2, 3): ("A", (1, 2)), (1, 4): ("B", (1, 2))}
ALL_PAIRS = tuple(sorted(DIRECT_PAIRS) + sorted(CONVERSION))

_BRIGHT_IDX = (2, 3)  # levels 3 and 4 are the m_S = 0 (bright) states

# rows of the intensity model: I = M @ populations
_INTENSITY_ROWS = {
    "A": np.array([-1.0, 0.0, 1.0, 0.0]),
    "B": np.array([0.0, -1.0, 0.0, 1.0]),
    "C": np.array([1.0, -1.0, 0.0, 0.0]),
    "D": np.array([0.0, 0.0, -1.0, 1.0]),
}
#: pulse path driven before the optical window, per measured transition
_INTENSITY_PATHS = {"A": ("A",), "B": ("B",), "C": ("C", "A"), "D": ("D", "A")}
_REFERENCE_PATHS = {"A": (), "B": (), "C": ("A",), "D": ("A",)}

CORRECTION_FLOOR = 0.1


class TomographyError(Exception):
    pass


@dataclass(frozen=True)
class TomographyRecord:
    """Raw (normalized) tomography data for one state."""

    populations: np.ndarray
    coherences: dict[tuple[int, int], complex]
    paths: dict[tuple[int, int], tuple[str, ...]] = field(default_factory=dict)
    correction_factors: dict[tuple[int, int], float] = field(default_factory=dict)
    normalization: float = 1.0
    absent: frozenset = frozenset()

    def __post_init__(self):
        pops = np.asarray(self.populations, dtype=float)
        pops.setflags(write=False)
        object.__setattr__(self, "populations", pops)

    def validate(self, tol: float = 1e-6) -> "TomographyRecord":
        if np.any(self.populations < -tol) or np.any(self.populations > 1 + tol):
            raise InvariantViolation("normalized populations outside [0, 1]")
        for pair in ALL_PAIRS:
            if pair not in self.coherences and pair not in self.absent:
                raise InvariantViolation(f"level pair {pair} neither measured nor marked absent")
        return self


@dataclass(frozen=True)
class FidelityReport:
    reconstructed: DensityMatrix
    ideal: DensityMatrix
    fidelity: float


@dataclass(frozen=True)
class ReconstructionReport:
    projection_distance: float
    min_eigenvalue: float
    trace_before_renorm: float


def bright_population(rho: DensityMatrix) -> float:
    """Total m_S = 0 population (the optically bright signal)."""
    return float(sum(rho.m[i, i].real for i in _BRIGHT_IDX))


def _safe_rabi(register, name: str) -> float:
    """Drive amplitude for measurement pulses, kept RWA-safe on slow lines."""
    base = register.mw_rabi_mhz if TRANSITION_CHANNELS[name] == "mw" else register.rf_rabi_mhz
    return min(base, 0.08 * register.table[name].frequency_mhz)


def _apply_named_pi(rho: DensityMatrix, register, name: str, noise: NoiseParams | None,
                    angle: float = math.pi, phase: float = 0.0) -> DensityMatrix:
    pulse = PulseSpec.by_angle(TRANSITION_CHANNELS[name], name, angle,
                               _safe_rabi(register, name), phase)
    if noise is None:
        return evolve(rho, pulse_propagator(register.levels, register.table, pulse))
    return apply_pulse_with_noise(rho, pulse, noise, register.levels, register.table)


def _sample(value: float, shots: int | None, rng) -> float:
    """A bright-population estimate from a finite number of optical cycles."""
    if shots is None:
        return value
    p = min(1.0, max(0.0, value))
    return rng.binomial(shots, p) / shots


def measure_diagonals(rho: DensityMatrix, register, noise: NoiseParams | None = None,
                      shots: int | None = None, rng=None,
                      reference: DensityMatrix | None = None) -> np.ndarray:
    """Populations of levels 1-4 from the four transition intensities.

    ``shots`` switches on binomial photon-cycle noise per optical window;
    the noiseless result equals diag(rho) exactly.
    """
    if shots is not None and rng is None:
        raise ValueError("sampled measurement needs an rng")
    ref_state = reference if reference is not None else DensityMatrix.pure_level(3)

    def intensity(state: DensityMatrix, name: str) -> float:
        before = state
        for leg in _REFERENCE_PATHS[name]:
            before = _apply_named_pi(before, register, leg, noise)
        after = state
        for leg in _INTENSITY_PATHS[name]:
            after = _apply_named_pi(after, register, leg, noise)
        return _sample(bright_population(before), shots, rng) - \
            _sample(bright_population(after), shots, rng)

    norm = intensity(ref_state, "A")
    if abs(norm) < 1e-9:
        raise TomographyError("singular normalization: zero reference intensity on A")

    rows = []
    values = []
    for name in ("A", "B", "C", "D"):
        rows.append(_INTENSITY_ROWS[name])
        values.append(intensity(rho, name) / norm)
    rows.append(np.ones(4))
    values.append(1.0)
    sol, *_ = np.linalg.lstsq(np.asarray(rows), np.asarray(values), rcond=None)
    return sol


def _pair_name(pair: tuple[int, int]) -> str | None:
    return DIRECT_PAIRS.get(tuple(sorted(pair)))


def measure_offdiagonal(rho: DensityMatrix, pair: tuple[int, int], register,
                        noise: NoiseParams | None = None,
                        populations: np.ndarray | None = None) -> complex:
    """Coherence rho[i, j] (i < j in level order) of a driven transition.

    Applies a pi/2 pulse in two quadratures on the pair's transition and
    inverts the nutation amplitudes; needs the pair's mean population,
    re-measured via :func:`measure_diagonals` unless supplied.
    """
    i, j = sorted(pair)
    name = _pair_name((i, j))
    if name is None:
        raise TomographyError(f"level pair {pair} is not directly measurable; convert first")
    if populations is None:
        populations = measure_diagonals(rho, register, noise)
    mean = (populations[i - 1] + populations[j - 1]) / 2.0

    eu = register.levels.level_energy
    u, l = (i, j) if eu(i) >= eu(j) else (j, i)
    s0 = _apply_named_pi(rho, register, name, noise, angle=math.pi / 2, phase=0.0)
    s90 = _apply_named_pi(rho, register, name, noise, angle=math.pi / 2, phase=math.pi / 2)
    # for the x-phase pi/2, p_u -> mean - Im(rho_ul); for the y-phase,
    # p_u -> mean + Re(rho_ul)
    im_ul = mean - s0.population(u)
    re_ul = s90.population(u) - mean
    est_ul = re_ul + 1j * im_ul
    return est_ul if (u, l) == (i, j) else est_ul.conjugate()


def conversion_correction(pair: tuple[int, int], register, noise: NoiseParams | None) -> float:
    """Deterministic coherence damping accrued during the conversion pulse."""
    if noise is None:
        return 1.0
    name, _ = CONVERSION[tuple(sorted(pair))]
    duration = PulseSpec.by_angle(TRANSITION_CHANNELS[name], name, math.pi,
                                  _safe_rabi(register, name)).duration_us
    # the transported coherence starts electron-flipping and ends nuclear
    rate = 0.5 * (1.0 / noise.t2_electron_us + 1.0 / noise.t2_nuclear_us)
    return math.exp(-duration * rate)


def convert_multi_quantum(rho: DensityMatrix, pair: tuple[int, int], register,
                          noise: NoiseParams | None = None,
                          ) -> tuple[tuple[str, ...], complex, float]:
    """Measure a one/two-quantum coherence via a conversion pi pulse.

    Returns (pulse path, corrected estimate, correction factor). The
    conversion pi pulse (x phase) maps the target coherence onto the C
    pair with a fixed i/-i phase; the deterministic damping during the
    conversion is divided out and must stay above ``CORRECTION_FLOOR``.
    """
    key = tuple(sorted(pair))
    if key not in CONVERSION:
        raise TomographyError(f"no conversion path for level pair {pair}")
    name, measured_pair = CONVERSION[key]
    converted = _apply_named_pi(rho, register, name, noise)
    raw = measure_offdiagonal(converted, measured_pair, register, noise)
    # x-phase pi rotations on (1,3) and (2,4) give
    #   rho'_12 = -i rho_32  (conversion on A, target pair (2,3))
    #   rho'_12 = +i rho_14  (conversion on B, target pair (1,4))
    if key == (2, 3):
        estimate = (1j * raw).conjugate()
    else:
        estimate = -1j * raw
    factor = conversion_correction(key, register, noise)
    if factor < CORRECTION_FLOOR:
        raise TomographyError(
            f"conversion correction {factor:.3g} below {CORRECTION_FLOOR}; estimate unreliable")
    return (name,), estimate / factor, factor


def tomograph(rho: DensityMatrix, register, noise: NoiseParams | None = None,
              shots: int | None = None, rng=None) -> TomographyRecord:
    """Full measurement protocol: all populations and all six coherences."""
    populations = measure_diagonals(rho, register, noise, shots, rng)
    coherences: dict[tuple[int, int], complex] = {}
    paths: dict[tuple[int, int], tuple[str, ...]] = {}
    factors: dict[tuple[int, int], float] = {}
    for pair, name in sorted(DIRECT_PAIRS.items()):
        coherences[pair] = measure_offdiagonal(rho, pair, register, noise,
                                               populations=populations)
        paths[pair] = (name,)
    for pair in sorted(CONVERSION):
        path, est, factor = convert_multi_quantum(rho, pair, register, noise)
        coherences[pair] = est
        paths[pair] = path + CONVERSION[pair][:1]
        factors[pair] = factor
    return TomographyRecord(populations, coherences, paths, factors).validate()


def reconstruct(record: TomographyRecord, return_report: bool = False):
    """Assemble a DensityMatrix from a complete record.

    Renormalizes the trace and, if the smallest eigenvalue is below
    -1e-6, projects onto the nearest positive-semidefinite matrix.
    """
    record.validate()
    missing = [p for p in ALL_PAIRS if p not in record.coherences]
    if missing:
        raise TomographyError(f"incomplete record: coherences missing for {missing}")
    m = np.diag(record.populations.astype(complex))
    for (i, j), value in record.coherences.items():
        m[i - 1, j - 1] = value
        m[j - 1, i - 1] = np.conjugate(value)
    trace = float(m.trace().real)
    if trace <= 0:
        raise TomographyError("reconstructed trace is not positive")
    m = m / trace
    w = np.linalg.eigvalsh(m)
    distance = 0.0
    if w.min() < -1e-6:
        m, distance = nearest_psd(m)
        m = m / m.trace().real
    rho = DensityMatrix(m)
    if return_report:
        return rho, ReconstructionReport(distance, float(w.min()), trace)
    return rho


def fidelity(rho_p: DensityMatrix, rho_i: DensityMatrix) -> float:
    """State overlap Tr[rho_P rho_I], clamped to [0, 1].

    The metric reaches 1 only against a pure ideal state; a warning is
    emitted when rho_I is visibly mixed.
    """
    if rho_p.dim != rho_i.dim:
        raise ValueError("dimension mismatch between prepared and ideal states")
    purity = float((rho_i.m @ rho_i.m).trace().real)
    if purity < 1.0 - 1e-6:
        warnings.warn(f"ideal state is mixed (purity {purity:.6f}); fidelity cannot reach 1",
                      stacklevel=2)
    value = float((rho_p.m @ rho_i.m).trace().real)
    if value < -1e-9 or value > 1.0 + 1e-9:
        warnings.warn(f"fidelity {value:.3e} clamped into [0, 1]", stacklevel=2)
    return min(1.0, max(0.0, value))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    w = np.linalg.eigvalsh(a.m - b.m)
    return 0.5 * float(np.abs(w).sum())


def dump_density_matrix(rho: DensityMatrix) -> str:
    """Structured text: dimension/basis header, row-major complex entries."""
    lines = [f"dim {rho.dim} basis {rho.basis}"]
    for row in rho.m:
        lines.append("  ".join(f"{z.real:.12g}{z.imag:+.12g}j" for z in row))
    return "\n".join(lines) + "\n"


def load_density_matrix(text: str) -> DensityMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty density-matrix text")
    header = lines[0].split()
    if len(header) < 2 or header[0] != "dim":
        raise ValueError(f"bad header {lines[0]!r}")
    dim = int(header[1])
    basis = header[3] if len(header) >= 4 and header[2] == "basis" else "levels4"
    if len(lines) != dim + 1:
        raise ValueError(f"expected {dim} matrix rows, found {len(lines) - 1}")
    m = np.zeros((dim, dim), dtype=complex)
    for r, line in enumerate(lines[1:]):
        entries = line.split()
        if len(entries) != dim:
            raise ValueError(f"row {r} has {len(entries)} entries, expected {dim}")
        m[r] = [complex(e) for e in entries]
    return DensityMatrix(m, basis)
