"""Rotating-frame pulse propagators, decoherence, and Rabi traces.

Model conventions
-----------------
* A selective pulse acts as a two-level rotation on its resolved level
  pair, embedded as identity on all spectator levels: the rotating-wave
  generator for Rabi frequency Omega (MHz), detuning Delta (MHz, carrier
  minus transition) and phase phi is

      H2 = [[-Delta/2, Omega/2 e^{+i phi}], [Omega/2 e^{-i phi}, Delta/2]]

  on (upper, lower), and U = exp(-2 pi i H2 t). A resonant pulse of
  duration 1/(2 Omega) is a pi rotation.
* Free evolution applies deterministic phases at the level-energy
  differences plus exponential damping: electron-flipping coherences
  decay with T2_electron, pure nuclear coherences with T2_nuclear, and
  the populations of each electron-flip pair relax toward their mean
  with T1_electron.
* Inhomogeneous broadening is quasi-static: per run, each broadened
  transition carries one frequency offset drawn from a Gaussian of the
  configured FWHM. Offsets are averaged over Gauss-Hermite quadrature
  nodes in a fixed order, so ensemble results are deterministic (and
  bit-identical whether members are evaluated sequentially or not).
* During a pulse the damping is interleaved with the coherent rotation
  in Trotter steps no longer than 0.01 * min(T2).
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy.optimize import curve_fit

from .linops import InvariantViolation, assert_unitary, dag, expi_hermitian, gauss_hermite_offsets
from .spinmodel import TRANSITION_CHANNELS, TRANSITION_PAIRS, EnergyLevels, TransitionTable

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
TROTTER_FRACTION = 0.01

#: index pairs of the 4-level working basis whose coherence flips the
#: electron (all pairs crossing the branch/m_S=0 divide)
_ELECTRON_PAIRS_4 = ((0, 2), (0, 3), (1, 2), (1, 3))
_NUCLEAR_PAIRS_4 = ((0, 1), (2, 3))
#: level pairs exchanged by electron T1 (electron flip, nuclear spectator)
_T1_PAIRS_4 = ((0, 2), (1, 3))


class RWAWarning(UserWarning):
    """Drive amplitude is not small against the carrier frequency."""


@dataclass(frozen=True)
class DensityMatrix:
    """State of the register: Hermitian, unit trace, PSD (to tolerance).

    ``basis`` is ``"levels4"`` for the working subspace ordered by level
    number (index = level - 1) or ``"eigen6"`` for the full eigenbasis.
    """

    m: np.ndarray
    basis: str = "levels4"

    def __post_init__(self):
        arr = np.asarray(self.m, dtype=complex)
        expected = {"levels4": 4, "eigen6": 6}.get(self.basis)
        if expected is None:
            raise ValueError(f"unknown basis tag {self.basis!r}")
        if arr.shape != (expected, expected):
            raise ValueError(f"basis {self.basis} requires shape ({expected},{expected})")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "m", arr)

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    def population(self, level: int) -> float:
        return float(self.m[level - 1, level - 1].real)

    def populations(self) -> np.ndarray:
        return self.m.diagonal().real.copy()

    def check(self, herm_tol: float = 1e-10, trace_tol: float = 1e-10,
              eig_floor: float = -1e-9) -> "DensityMatrix":
        if np.abs(self.m - dag(self.m)).max() > herm_tol:
            raise InvariantViolation("density matrix is not Hermitian")
        if abs(self.m.trace().real - 1.0) > trace_tol or abs(self.m.trace().imag) > trace_tol:
            raise InvariantViolation(f"density matrix trace {self.m.trace():.12g} != 1")
        w = np.linalg.eigvalsh((self.m + dag(self.m)) / 2)
        if w.min() < eig_floor:
            raise InvariantViolation(f"density matrix has eigenvalue {w.min():.3e} < {eig_floor:g}")
        return self

    @classmethod
    def pure_level(cls, level: int, basis: str = "levels4") -> "DensityMatrix":
        dim = 4 if basis == "levels4" else 6
        m = np.zeros((dim, dim), dtype=complex)
        m[level - 1, level - 1] = 1.0
        return cls(m, basis)

    @classmethod
    def from_populations(cls, pops, basis: str = "levels4") -> "DensityMatrix":
        return cls(np.diag(np.asarray(pops, dtype=complex)), basis)


@dataclass(frozen=True)
class PulseSpec:
    """One square drive pulse.

    ``target`` is a transition name (A-D) or None with an explicit
    ``carrier_mhz``; ``detuning_mhz`` is an additional offset of the
    carrier from the resolved transition.
    """

    channel: str
    target: str | None
    rabi_mhz: float
    duration_us: float
    phase_rad: float = 0.0
    detuning_mhz: float = 0.0
    carrier_mhz: float | None = None

    def __post_init__(self):
        if self.channel not in ("mw", "rf"):
            raise ValueError(f"channel must be 'mw' or 'rf', got {self.channel!r}")
        if self.target is None and self.carrier_mhz is None:
            raise ValueError("pulse needs a transition name or an explicit carrier")
        if self.duration_us < 0:
            raise ValueError("pulse duration must be non-negative")
        if self.rabi_mhz < 0:
            raise ValueError("Rabi frequency must be non-negative")

    @property
    def rotation_angle(self) -> float:
        """Nominal on-resonance rotation angle, 2 pi * Omega * t."""
        return 2.0 * math.pi * self.rabi_mhz * self.duration_us

    @classmethod
    def by_angle(cls, channel: str, target: str | None, angle_rad: float,
                 rabi_mhz: float, phase_rad: float = 0.0, detuning_mhz: float = 0.0,
                 carrier_mhz: float | None = None) -> "PulseSpec":
        if rabi_mhz <= 0:
            raise ValueError("angle-form pulse needs a positive Rabi frequency")
        duration = angle_rad / (2.0 * math.pi * rabi_mhz)
        return cls(channel, target, rabi_mhz, duration, phase_rad, detuning_mhz, carrier_mhz)


def pi_pulse(target: str, rabi_mhz: float, phase_rad: float = 0.0) -> PulseSpec:
    return PulseSpec.by_angle(TRANSITION_CHANNELS[target], target, math.pi, rabi_mhz, phase_rad)


def half_pi_pulse(target: str, rabi_mhz: float, phase_rad: float = 0.0) -> PulseSpec:
    return PulseSpec.by_angle(TRANSITION_CHANNELS[target], target, math.pi / 2, rabi_mhz, phase_rad)


@dataclass(frozen=True)
class NoiseParams:
    """Decoherence times (us), inhomogeneous linewidths (MHz FWHM) and the
    quadrature size used for the quasi-static ensemble average."""

    t1_electron_us: float = math.inf
    t2_electron_us: float = math.inf
    t2_nuclear_us: float = math.inf
    linewidth_a_mhz: float = 0.0
    linewidth_c_mhz: float = 0.0
    ensemble_size: int = 21
    #: equilibrium population imbalance (p_branch - p_ms0)/(sum) of each
    #: electron-flip pair under T1; 0 = unpolarized fixed point
    t1_equilibrium_bias: float = 0.0

    def __post_init__(self):
        for name in ("t1_electron_us", "t2_electron_us", "t2_nuclear_us"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.t2_electron_us > 2.0 * self.t1_electron_us:
            raise ValueError("electron channel requires T2 <= 2*T1")
        if self.linewidth_a_mhz < 0 or self.linewidth_c_mhz < 0:
            raise ValueError("linewidths must be non-negative")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if not -1.0 <= self.t1_equilibrium_bias <= 1.0:
            raise ValueError("t1_equilibrium_bias must lie in [-1, 1]")

    def linewidth(self, transition: str) -> float:
        return {"A": self.linewidth_a_mhz, "C": self.linewidth_c_mhz}.get(transition, 0.0)

    def min_t2_us(self) -> float:
        return min(self.t2_electron_us, self.t2_nuclear_us)

    def has_damping(self) -> bool:
        return any(math.isfinite(t) for t in
                   (self.t1_electron_us, self.t2_electron_us, self.t2_nuclear_us))


NO_NOISE = NoiseParams()


def resolve_target(pulse: PulseSpec, table: TransitionTable) -> tuple[str, float]:
    """Bind a pulse to a transition name and total carrier detuning (MHz)."""
    if pulse.target is not None:
        if pulse.target not in TRANSITION_PAIRS:
            raise ValueError(f"unknown transition {pulse.target!r}")
        entry = table[pulse.target]
        if entry.channel != pulse.channel:
            raise ValueError(
                f"channel mismatch: transition {pulse.target} is a "
                f"{entry.channel.upper()} line, pulse channel is {pulse.channel.upper()}"
            )
        detuning = pulse.detuning_mhz
        if pulse.carrier_mhz is not None:
            detuning += pulse.carrier_mhz - entry.frequency_mhz
        return pulse.target, detuning
    candidates = [t for t in table if t.channel == pulse.channel]
    entry = min(candidates, key=lambda t: abs(pulse.carrier_mhz - t.frequency_mhz))
    return entry.name, pulse.detuning_mhz + pulse.carrier_mhz - entry.frequency_mhz


def _pair_indices(name: str, levels: EnergyLevels, dim: int) -> tuple[int, int]:
    """(upper, lower) basis indices of a transition's level pair."""
    i, j = TRANSITION_PAIRS[name]
    ei, ej = levels.level_energy(i), levels.level_energy(j)
    hi, lo = (i, j) if ei >= ej else (j, i)
    if dim == 4:
        return hi - 1, lo - 1
    return levels.labels[hi], levels.labels[lo]


def pulse_propagator(levels: EnergyLevels, table: TransitionTable, pulse: PulseSpec,
                     dim: int = 4, extra_detuning_mhz: float = 0.0) -> np.ndarray:
    """Unitary for one selective pulse, identity on spectator levels."""
    if dim not in (4, 6):
        raise ValueError("dim must be 4 (working subspace) or 6 (full space)")
    name, detuning = resolve_target(pulse, table)
    detuning += extra_detuning_mhz
    carrier = table[name].frequency_mhz + detuning
    if pulse.rabi_mhz > 0.1 * abs(carrier):
        warnings.warn(
            f"Rabi frequency {pulse.rabi_mhz:g} MHz is not small against the "
            f"{name} carrier ({carrier:g} MHz); rotating-wave treatment is inaccurate",
            RWAWarning, stacklevel=2,
        )
    u_idx, l_idx = _pair_indices(name, levels, dim)
    omega = pulse.rabi_mhz
    phi = pulse.phase_rad
    h2 = np.array(
        [[-detuning / 2.0, omega / 2.0 * np.exp(1j * phi)],
         [omega / 2.0 * np.exp(-1j * phi), detuning / 2.0]],
        dtype=complex,
    )
    block = expi_hermitian(2.0 * math.pi * pulse.duration_us * h2)
    u = np.eye(dim, dtype=complex)
    u[np.ix_((u_idx, l_idx), (u_idx, l_idx))] = block
    return u


def evolve(rho: DensityMatrix, u: np.ndarray) -> DensityMatrix:
    """Conjugate the state by a unitary: rho -> U rho U+."""
    if u.shape != (rho.dim, rho.dim):
        raise ValueError(f"dimension mismatch: state {rho.dim}, propagator {u.shape}")
    assert_unitary(u)
    m = u @ rho.m @ dag(u)
    return DensityMatrix((m + dag(m)) / 2.0, rho.basis)


def _coherence_mask(noise: NoiseParams, dt: float) -> np.ndarray:
    f_e = math.exp(-dt / noise.t2_electron_us)
    f_n = math.exp(-dt / noise.t2_nuclear_us)
    mask = np.ones((4, 4))
    for i, j in _ELECTRON_PAIRS_4:
        mask[i, j] = mask[j, i] = f_e
    for i, j in _NUCLEAR_PAIRS_4:
        mask[i, j] = mask[j, i] = f_n
    return mask


def _damp(m: np.ndarray, noise: NoiseParams, dt: float) -> np.ndarray:
    """One closed-form damping interval of the diagonal-dissipator model."""
    if dt == 0.0 or not noise.has_damping():
        return m
    m = m * _coherence_mask(noise, dt)
    if math.isfinite(noise.t1_electron_us):
        decay = math.exp(-dt / noise.t1_electron_us)
        for i, j in _T1_PAIRS_4:
            total = m[i, i].real + m[j, j].real
            diff_eq = noise.t1_equilibrium_bias * total
            diff = diff_eq + (m[i, i].real - m[j, j].real - diff_eq) * decay
            m[i, i] = (total + diff) / 2.0
            m[j, j] = (total - diff) / 2.0
    return m


def _phase_rates(levels: EnergyLevels, detunings: dict[str, float] | None) -> np.ndarray:
    """Matrix of signed phase rates (MHz): R[a,b] = E_a - E_b + offsets."""
    e = levels.working_energies()
    rates = e[:, None] - e[None, :]
    if not detunings:
        return rates

    def signed(name: str) -> float:
        xi = detunings.get(name, 0.0)
        if xi == 0.0:
            return 0.0
        i, j = TRANSITION_PAIRS[name]
        return xi if e[i - 1] >= e[j - 1] else -xi

    # direct pairs: offset raises |E_i - E_j|
    for name, (i, j) in TRANSITION_PAIRS.items():
        s = signed(name)
        if s:
            rates[i - 1, j - 1] += s
            rates[j - 1, i - 1] -= s
    # multi-quantum pairs via their composition path: (1,4) = A then D
    # legs 1->3->4; (2,3) = C then A legs 2->1->3
    s_a, s_c, s_d = signed("A"), signed("C"), signed("D")
    # E1 - E4 = (E1 - E3) + (E3 - E4)
    rates[0, 3] += s_a + s_d
    rates[3, 0] -= s_a + s_d
    # E2 - E3 = (E2 - E1) + (E1 - E3) = -(E1 - E2) + (E1 - E3)
    rates[1, 2] += -s_c + s_a
    rates[2, 1] -= -s_c + s_a
    return rates


def free_evolution(rho: DensityMatrix, duration_us: float, noise: NoiseParams,
                   levels: EnergyLevels, detunings: dict[str, float] | None = None) -> DensityMatrix:
    """Drift for a wait interval: deterministic phases plus damping."""
    if duration_us < 0:
        raise ValueError("duration must be non-negative")
    if rho.basis != "levels4":
        raise ValueError("free evolution is defined on the working subspace")
    if duration_us == 0.0:
        return rho
    rates = _phase_rates(levels, detunings)
    phases = np.exp(-2j * math.pi * rates * duration_us)
    m = rho.m * phases
    m = _damp(m.copy(), noise, duration_us)
    return DensityMatrix(m, rho.basis)


def detuning_members(noise: NoiseParams, transitions: tuple[str, ...] = ("A", "C"),
                     ) -> list[tuple[float, dict[str, float]]]:
    """Deterministic quasi-static ensemble: (weight, offsets-by-transition).

    One Gauss-Hermite grid per broadened transition, tensored in a fixed
    order; transitions with zero linewidth contribute no dimension.
    """
    axes: list[tuple[str, np.ndarray, np.ndarray]] = []
    for name in transitions:
        fwhm = noise.linewidth(name)
        if fwhm > 0.0:
            offs, wts = gauss_hermite_offsets(fwhm * FWHM_TO_SIGMA, noise.ensemble_size)
            axes.append((name, offs, wts))
    if not axes:
        return [(1.0, {})]
    members = []
    for combo in itertools.product(*(range(len(a[1])) for a in axes)):
        weight = 1.0
        detmap: dict[str, float] = {}
        for (name, offs, wts), k in zip(axes, combo):
            weight *= wts[k]
            detmap[name] = float(offs[k])
        members.append((weight, detmap))
    return members


def _trotter_steps(duration_us: float, noise: NoiseParams) -> int:
    if duration_us == 0.0:
        return 1
    if not noise.has_damping() or not math.isfinite(noise.min_t2_us()):
        return 1
    return max(1, math.ceil(duration_us / (TROTTER_FRACTION * noise.min_t2_us())))


def apply_pulse_member(rho: DensityMatrix, pulse: PulseSpec, noise: NoiseParams,
                       levels: EnergyLevels, table: TransitionTable,
                       detunings: dict[str, float] | None = None) -> DensityMatrix:
    """One ensemble member: Trotterized rotation + damping, no averaging."""
    name, _ = resolve_target(pulse, table)
    xi = (detunings or {}).get(name, 0.0)
    n = _trotter_steps(pulse.duration_us, noise)
    step = replace(pulse, duration_us=pulse.duration_us / n)
    u = pulse_propagator(levels, table, step, dim=4, extra_detuning_mhz=-xi)
    dt = pulse.duration_us / n
    m = rho.m.copy()
    for _ in range(n):
        m = _damp(m, noise, dt / 2.0)
        m = u @ m @ dag(u)
        m = _damp(m, noise, dt / 2.0)
    return DensityMatrix((m + dag(m)) / 2.0, rho.basis)


def apply_pulse_with_noise(rho: DensityMatrix, pulse: PulseSpec, noise: NoiseParams,
                           levels: EnergyLevels, table: TransitionTable,
                           detunings: dict[str, float] | None = None) -> DensityMatrix:
    """Noisy pulse: quasi-static ensemble average with interleaved damping.

    When ``detunings`` is given the pulse is evaluated for that single
    ensemble member (used by sequence-level averaging); otherwise the
    pulse's own transition is averaged over its linewidth.
    """
    if detunings is not None:
        return apply_pulse_member(rho, pulse, noise, levels, table, detunings)
    name, _ = resolve_target(pulse, table)
    members = detuning_members(noise, (name,))
    if len(members) == 1:
        return apply_pulse_member(rho, pulse, noise, levels, table, members[0][1])
    acc = np.zeros_like(rho.m)
    for weight, detmap in members:
        acc = acc + weight * apply_pulse_member(rho, pulse, noise, levels, table, detmap).m
    return DensityMatrix(acc, rho.basis)


@dataclass(frozen=True)
class RabiTrace:
    """A nutation trace and its damped-cosine fit."""

    durations_us: np.ndarray
    populations: np.ndarray
    fitted_frequency_mhz: float
    fitted_decay_us: float
    fit_residual: float
    amplitude: float = dc_field(default=float("nan"))
    offset: float = dc_field(default=float("nan"))
    phase_rad: float = dc_field(default=float("nan"))

    def __post_init__(self):
        d = np.asarray(self.durations_us, dtype=float)
        p = np.asarray(self.populations, dtype=float)
        d.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "durations_us", d)
        object.__setattr__(self, "populations", p)


def fit_damped_cosine(t: np.ndarray, y: np.ndarray) -> dict[str, float]:
    """Least-squares fit of a * exp(-t/tau) * cos(2 pi f t + phi) + c.

    The frequency seed comes from the discrete spectrum peak, the decay
    seed from the trace span; returns fitted parameters and the RMS
    residual. ``tau`` is +inf when the fitted rate hits zero.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 8:
        raise ValueError("need at least 8 samples to fit a damped cosine")
    span = t[-1] - t[0]
    if span <= 0:
        raise ValueError("durations must be strictly increasing")
    c0 = float(y.mean())
    a0 = max(1e-6, (y.max() - y.min()) / 2.0)
    # spectrum peak on a uniform resample (grids are usually uniform already)
    tu = np.linspace(t[0], t[-1], max(len(t), 64))
    yu = np.interp(tu, t, y) - c0
    spec = np.abs(np.fft.rfft(yu))
    freqs = np.fft.rfftfreq(len(tu), d=tu[1] - tu[0])
    k = 1 + int(np.argmax(spec[1:]))
    f0 = max(freqs[k], 1.0 / (4.0 * span))
    # phase seed by linear regression on the two quadratures
    cos_b = np.cos(2 * np.pi * f0 * t)
    sin_b = np.sin(2 * np.pi * f0 * t)
    basis = np.stack([cos_b, sin_b], axis=1)
    coef, *_ = np.linalg.lstsq(basis, y - c0, rcond=None)
    phi0 = math.atan2(-coef[1], coef[0])
    a0 = max(a0, float(np.hypot(*coef)))

    def model(tt, a, rate, f, phi, c):
        return a * np.exp(-rate * tt) * np.cos(2 * np.pi * f * tt + phi) + c

    p0 = (a0, 0.1 / span, f0, phi0, c0)
    bounds = ([0.0, 0.0, 0.0, -2 * np.pi, -1.0], [2.0, np.inf, np.inf, 2 * np.pi, 2.0])
    popt, _ = curve_fit(model, t, y, p0=p0, bounds=bounds, maxfev=20000)
    a, rate, f, phi, c = popt
    resid = float(np.sqrt(np.mean((model(t, *popt) - y) ** 2)))
    tau = math.inf if rate < 1e-12 else 1.0 / rate
    return {"amplitude": a, "decay_us": tau, "frequency_mhz": f,
            "phase_rad": phi, "offset": c, "residual": resid}


def rabi_trace(rho0: DensityMatrix, transition: str, rabi_mhz: float,
               durations_us, noise: NoiseParams, levels: EnergyLevels,
               table: TransitionTable, watch_level: int | None = None,
               detuning_mhz: float = 0.0) -> RabiTrace:
    """Drive one transition for each duration and fit the nutation."""
    durations = np.asarray(durations_us, dtype=float)
    if durations.size < 8:
        raise ValueError("need at least 8 durations for a Rabi trace")
    if np.any(durations < 0) or np.any(np.diff(durations) <= 0):
        raise ValueError("durations must be ascending and non-negative")
    channel = TRANSITION_CHANNELS[transition]
    if watch_level is None:
        u_idx, _ = _pair_indices(transition, levels, 4)
        watch_level = u_idx + 1
    pops = np.empty_like(durations)
    for k, dur in enumerate(durations):
        pulse = PulseSpec(channel, transition, rabi_mhz, float(dur),
                          detuning_mhz=detuning_mhz)
        out = apply_pulse_with_noise(rho0, pulse, noise, levels, table)
        pops[k] = out.population(watch_level)
    fit = fit_damped_cosine(durations, pops)
    return RabiTrace(durations, pops, fit["frequency_mhz"], fit["decay_us"],
                     fit["residual"], fit["amplitude"], fit["offset"], fit["phase_rad"])
