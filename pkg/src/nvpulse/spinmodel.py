"""Static spin model: operators, Hamiltonian, energy levels, transitions.

The register is a single electron spin (S = 1) coupled to one nearby
spin-1/2 nucleus. The Hamiltonian on the 6-dimensional product space
(electron factor first) is

    H = g_e beta_e S.B  +  S D S  +  S A I  -  g_n beta_n I.B

with all energies in MHz, magnetic fields in mT and times in us throughout
the package. Four of the six eigenstates form the working register: the
two nuclear sublevels of one electron branch (levels 1, 2) and the two
nuclear sublevels of the m_S = 0 manifold (levels 3, 4). The four
first-order allowed transitions are the electron-flipping MW lines
A = (1,3), B = (2,4) and the nuclear-flipping RF lines C = (1,2),
D = (3,4).

Qubit convention: |10> = level 1, |11> = level 2, |00> = level 3,
|01> = level 4 (electron qubit first, 0 meaning m_S = 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import brentq

from .linops import assert_hermitian, dag

# Electron g-factor and magnetons in MHz/mT; nuclear values for 13C.
G_ELECTRON = 2.0028
G_NUCLEAR_C13 = 1.4048
BOHR_MAGNETON_MHZ_PER_MT = 13.996245
NUCLEAR_MAGNETON_MHZ_PER_MT = 7.6225932e-3

# Literature zero-field splitting of the electron triplet (external
# default, not part of the modelled data set) and the first-shell 13C
# hyperfine coupling.
ZERO_FIELD_SPLITTING_MHZ = 2870.0
HYPERFINE_MHZ = 130.0

ELECTRON_MS = (1.0, 0.0, -1.0)
NUCLEAR_MI = (0.5, -0.5)

# Working level -> (m_S, m_I) character, for electron branch b in {+1,-1}.
def _level_characters(branch: int) -> dict[int, tuple[float, float]]:
    return {
        1: (float(branch), 0.5),
        2: (float(branch), -0.5),
        3: (0.0, 0.5),
        4: (0.0, -0.5),
    }


# Transition name -> oriented level pair. The orientation fixes the sign
# convention of `signed_gap`, chosen so that the four-level cycle identity
# gap(A) - gap(B) == gap(C) - gap(D) holds exactly for any spectrum.
TRANSITION_PAIRS: dict[str, tuple[int, int]] = {
    "A": (1, 3),
    "B": (2, 4),
    "C": (1, 2),
    "D": (3, 4),
}
TRANSITION_CHANNELS = {"A": "mw", "B": "mw", "C": "rf", "D": "rf"}
TRANSITION_SELECTION = {
    "A": "dmS=+-1, dmI=0",
    "B": "dmS=+-1, dmI=0",
    "C": "dmI=+-1, dmS=0",
    "D": "dmI=+-1, dmS=0",
}


class LabelingError(Exception):
    """Raised when eigenstates cannot be assigned to the working levels."""


def spin_operators(s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spin matrices (Sx, Sy, Sz) for s in {1/2, 1}.

    Basis ordered by descending magnetic quantum number, so Sz comes out
    diagonal with eigenvalues (s, s-1, ..., -s).
    """
    if s not in (0.5, 1.0):
        raise ValueError(f"unsupported spin quantum number {s!r}; expected 1/2 or 1")
    dim = int(round(2 * s + 1))
    m = s - np.arange(dim)
    sz = np.diag(m).astype(complex)
    # <m+1| S+ |m> = sqrt(s(s+1) - m(m+1))
    raising = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        mm = m[k]
        raising[k - 1, k] = np.sqrt(s * (s + 1) - mm * (mm + 1))
    sx = (raising + dag(raising)) / 2.0
    sy = (raising - dag(raising)) / 2.0j
    return sx, sy, sz


def _as_tensor(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape == ():
        arr = float(arr) * np.eye(3)
    if arr.shape != (3, 3):
        raise ValueError(f"{name} must be a scalar or 3x3 tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.abs(arr).max()))
    if np.abs(arr - arr.T).max() > 1e-12 * scale:
        raise ValueError(f"{name} must be symmetric to 1e-12 relative tolerance")
    arr = (arr + arr.T) / 2.0
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpinSystemParams:
    """Physical constants of the coupled-spin Hamiltonian (MHz, mT)."""

    g_e: float = G_ELECTRON
    g_n: float = G_NUCLEAR_C13
    beta_e: float = BOHR_MAGNETON_MHZ_PER_MT
    beta_n: float = NUCLEAR_MAGNETON_MHZ_PER_MT
    D: np.ndarray = field(default_factory=lambda: np.diag([0.0, 0.0, ZERO_FIELD_SPLITTING_MHZ]))
    A: np.ndarray = field(default_factory=lambda: HYPERFINE_MHZ * np.eye(3))
    B: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (np.isfinite(self.beta_e) and self.beta_e > 0):
            raise ValueError("beta_e must be positive and finite")
        if not (np.isfinite(self.beta_n) and self.beta_n > 0):
            raise ValueError("beta_n must be positive and finite")
        if not (np.isfinite(self.g_e) and np.isfinite(self.g_n)):
            raise ValueError("g-factors must be finite")
        object.__setattr__(self, "D", _as_tensor(self.D, "D"))
        object.__setattr__(self, "A", _as_tensor(self.A, "A"))
        b = np.asarray(self.B, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(b)):
            raise ValueError("B contains non-finite entries")
        b.setflags(write=False)
        object.__setattr__(self, "B", b)


def build_hamiltonian(params: SpinSystemParams) -> np.ndarray:
    """6x6 Hamiltonian in MHz on the (electron ox nucleus) product space."""
    s_ops = spin_operators(1.0)
    i_ops = spin_operators(0.5)
    eye_e = np.eye(3, dtype=complex)
    eye_n = np.eye(2, dtype=complex)

    h = np.zeros((6, 6), dtype=complex)
    for k in range(3):
        h += params.g_e * params.beta_e * params.B[k] * np.kron(s_ops[k], eye_n)
        h -= params.g_n * params.beta_n * params.B[k] * np.kron(eye_e, i_ops[k])
        for l in range(3):
            h += params.D[k, l] * np.kron(s_ops[k] @ s_ops[l], eye_n)
            h += params.A[k, l] * np.kron(s_ops[k], i_ops[l])
    assert_hermitian(h, what="spin Hamiltonian")
    return h


@dataclass(frozen=True)
class EnergyLevels:
    """Eigendecomposition of the Hamiltonian plus the working-level map.

    ``energies`` ascend; ``states`` holds the matching eigenvectors as
    columns (product basis). ``labels`` maps working levels 1..4 to
    eigenindices; ``characters``/``weights`` give the dominant (m_S, m_I)
    of every eigenstate and its weight.
    """

    energies: np.ndarray
    states: np.ndarray
    labels: Mapping[int, int]
    characters: tuple[tuple[float, float], ...]
    weights: tuple[float, ...]
    branch: int

    def level_energy(self, level: int) -> float:
        return float(self.energies[self.labels[level]])

    def working_energies(self) -> np.ndarray:
        """Energies of working levels 1..4, in level order."""
        return np.array([self.level_energy(n) for n in (1, 2, 3, 4)])

    def nuclear_zeeman_splitting(self) -> float:
        return abs(self.level_energy(3) - self.level_energy(4))


def eigenlevels(h: np.ndarray, branch: int = -1, min_weight: float = 0.6,
                require_labels: bool = True) -> EnergyLevels:
    """Diagonalize and label the four working levels.

    Each working level is assigned to the eigenstate whose dominant
    product-basis character matches; an assignment is rejected (loudly)
    when the dominant weight drops below ``min_weight`` or two levels
    would claim the same eigenstate. ``require_labels=False`` returns the
    bare eigendecomposition with whatever labels resolved (useful for
    spectra without register structure).
    """
    assert_hermitian(h, what="Hamiltonian")
    if branch not in (-1, 1):
        raise ValueError("branch must be +1 or -1")
    w, v = np.linalg.eigh(h)

    basis_chars = [(ms, mi) for ms in ELECTRON_MS for mi in NUCLEAR_MI]
    probs = np.abs(v) ** 2
    dominant = probs.argmax(axis=0)
    characters = tuple(basis_chars[int(k)] for k in dominant)
    weights = tuple(float(probs[int(k), j]) for j, k in enumerate(dominant))

    labels: dict[int, int] = {}
    for level, char in _level_characters(branch).items():
        hits = [j for j in range(6) if characters[j] == char]
        if len(hits) != 1:
            if require_labels:
                raise LabelingError(
                    f"level {level} (m_S={char[0]:+g}, m_I={char[1]:+g}) matches "
                    f"{len(hits)} eigenstates; cannot label"
                )
            continue
        j = hits[0]
        if weights[j] < min_weight:
            if require_labels:
                raise LabelingError(
                    f"level {level} has dominant-character weight {weights[j]:.3f} "
                    f"< {min_weight:.2f}; labeling ambiguous"
                )
            continue
        labels[level] = j

    energies = w.copy()
    energies.setflags(write=False)
    states = v.copy()
    states.setflags(write=False)
    return EnergyLevels(energies, states, labels, characters, weights, branch)


@dataclass(frozen=True)
class TransitionEntry:
    name: str
    levels: tuple[int, int]
    frequency_mhz: float
    channel: str
    selection: str


@dataclass(frozen=True)
class TransitionTable:
    entries: Mapping[str, TransitionEntry]
    level_energies: Mapping[int, float]

    def __getitem__(self, name: str) -> TransitionEntry:
        return self.entries[name]

    def __iter__(self):
        return iter(self.entries.values())

    def signed_gap(self, name: str) -> float:
        """E(first) - E(second) for the oriented pair of a transition."""
        i, j = TRANSITION_PAIRS[name]
        return self.level_energies[i] - self.level_energies[j]


def transition_table(levels: EnergyLevels) -> TransitionTable:
    """The four allowed transitions with their frequencies (MHz > 0)."""
    missing = [n for n in (1, 2, 3, 4) if n not in levels.labels]
    if missing:
        raise LabelingError(f"working levels {missing} are unlabeled")
    level_e = {n: levels.level_energy(n) for n in (1, 2, 3, 4)}
    entries = {}
    for name, (i, j) in TRANSITION_PAIRS.items():
        entries[name] = TransitionEntry(
            name=name,
            levels=(i, j),
            frequency_mhz=abs(level_e[i] - level_e[j]),
            channel=TRANSITION_CHANNELS[name],
            selection=TRANSITION_SELECTION[name],
        )
    return TransitionTable(entries, level_e)


def calibrate_field(
    params: SpinSystemParams,
    nuclear_zeeman_mhz: float = 3.0,
    branch: int = -1,
    b_max_mt: float = 300.0,
) -> SpinSystemParams:
    """Set B along the defect axis so the 3-4 splitting hits a target.

    The target splitting is a free calibration parameter (the observed
    2-10 MHz range is not reproduced by the bare nuclear moment alone;
    hyperfine level repulsion contributes, so the field is solved against
    the full eigen-splitting rather than the linear Zeeman formula). The
    field sign is chosen opposite to the branch sense so that the nuclear
    line C lands below the bare hyperfine frequency.
    """
    if nuclear_zeeman_mhz <= 0:
        raise ValueError("nuclear Zeeman target must be positive")

    sign = -1.0 if branch == -1 else 1.0
    # stay below the m_S=0 / electron-branch level anticrossing, where the
    # working levels lose their product character and labeling fails
    b_anticross = (params.D[2, 2] - abs(params.A[2, 2]) / 2.0) / (params.g_e * params.beta_e)
    if b_anticross > 0:
        b_max_mt = min(b_max_mt, 0.8 * b_anticross)

    def splitting(bz: float) -> float:
        p = SpinSystemParams(
            g_e=params.g_e, g_n=params.g_n, beta_e=params.beta_e,
            beta_n=params.beta_n, D=params.D, A=params.A,
            B=np.array([0.0, 0.0, bz]),
        )
        return eigenlevels(build_hamiltonian(p), branch=branch).nuclear_zeeman_splitting()

    def objective(mag: float) -> float:
        return splitting(sign * mag) - nuclear_zeeman_mhz

    lo, hi = 1e-3, 1.0
    f_lo = objective(lo)
    f_hi = objective(hi)
    while f_lo * f_hi > 0 and hi < b_max_mt:
        lo, f_lo = hi, f_hi
        hi = min(2 * hi, b_max_mt)
        f_hi = objective(hi)
    if f_lo * f_hi > 0:
        raise ValueError(
            f"cannot calibrate field: no bracket for target "
            f"{nuclear_zeeman_mhz} MHz below {b_max_mt} mT"
        )
    mag = brentq(objective, lo, hi, xtol=1e-10, rtol=1e-14)
    return SpinSystemParams(
        g_e=params.g_e, g_n=params.g_n, beta_e=params.beta_e,
        beta_n=params.beta_n, D=params.D, A=params.A,
        B=np.array([0.0, 0.0, sign * mag]),
    )
