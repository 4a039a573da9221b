"""Configuration loading: shipped defaults, user file, flag overrides.

Precedence is flags > file > shipped defaults; the fully merged mapping
is kept on the :class:`RunConfig` so runs can echo their effective
configuration.
"""

from __future__ import annotations

import copy
import hashlib
import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .experiments import Register
from .pulses import NoiseParams
from .readout import ReadoutParams
from .spinmodel import SpinSystemParams


class ConfigError(Exception):
    pass


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def default_mapping() -> dict:
    text = importlib.resources.files("nvpulse.data").joinpath("default.yaml").read_text()
    return yaml.safe_load(text)


def _section(mapping: dict, name: str) -> dict:
    sec = mapping.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return sec


def _get(sec: dict, section: str, key: str, kind=float):
    if key not in sec:
        raise ConfigError(f"missing config key {section}.{key}")
    try:
        return kind(sec[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {section}.{key}: {sec[key]!r} ({exc})") from exc


@dataclass(frozen=True)
class RunConfig:
    spin_params: SpinSystemParams
    working_branch: int
    nuclear_zeeman_target_mhz: float | None
    mw_rabi_mhz: float
    rf_rabi_mhz: float
    noise: NoiseParams
    epsilon: float
    init_max_attempts: int
    readout: ReadoutParams
    endurance_noise: NoiseParams
    endurance_gate_time_us: float
    endurance_n_max: int
    sweeps: dict
    seed: int
    mapping: dict

    def build_register(self) -> Register:
        return Register.build(self.spin_params, self.nuclear_zeeman_target_mhz,
                              self.working_branch, self.mw_rabi_mhz, self.rf_rabi_mhz)

    def config_hash(self) -> str:
        text = yaml.safe_dump(self.mapping, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def echo_yaml(self) -> str:
        return yaml.safe_dump(self.mapping, sort_keys=False)


def _noise_from(sec: dict, name: str) -> NoiseParams:
    try:
        return NoiseParams(
            t1_electron_us=_get(sec, name, "t1_electron_us"),
            t2_electron_us=_get(sec, name, "t2_electron_us"),
            t2_nuclear_us=_get(sec, name, "t2_nuclear_us"),
            linewidth_a_mhz=float(sec.get("linewidth_a_mhz", 0.0)),
            linewidth_c_mhz=float(sec.get("linewidth_c_mhz", 0.0)),
            ensemble_size=int(sec.get("ensemble_size", 21)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid {name} block: {exc}") from exc


def from_mapping(mapping: dict) -> RunConfig:
    spin = _section(mapping, "spin_system")
    aniso = float(spin.get("hyperfine_axial_anisotropy_mhz", 0.0))
    hyperfine = _get(spin, "spin_system", "hyperfine_mhz")
    a_tensor = hyperfine * np.eye(3)
    a_tensor[2, 2] += aniso
    b_field = spin.get("b_field_mt")
    try:
        spin_params = SpinSystemParams(
            g_e=_get(spin, "spin_system", "g_electron"),
            g_n=_get(spin, "spin_system", "g_nuclear"),
            beta_e=_get(spin, "spin_system", "bohr_magneton_mhz_per_mt"),
            beta_n=_get(spin, "spin_system", "nuclear_magneton_mhz_per_mt"),
            D=np.diag([0.0, 0.0, _get(spin, "spin_system", "zero_field_splitting_mhz")]),
            A=a_tensor,
            B=np.asarray(b_field, dtype=float) if b_field is not None else np.zeros(3),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid spin_system block: {exc}") from exc
    branch = int(spin.get("working_branch", -1))
    if branch not in (-1, 1):
        raise ConfigError("spin_system.working_branch must be -1 or +1")
    target = spin.get("nuclear_zeeman_target_mhz", None)
    target = float(target) if target is not None else None
    if b_field is not None:
        target = None  # explicit field overrides the calibration

    drive = _section(mapping, "drive")
    init = _section(mapping, "initialization")
    epsilon = float(init.get("epsilon", 0.01))
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError("initialization.epsilon must lie in [0, 1)")

    ro = _section(mapping, "readout")
    try:
        readout = ReadoutParams(
            bright_rate=_get(ro, "readout", "bright_rate_per_us"),
            dark_state_rate=_get(ro, "readout", "dark_state_rate_per_us"),
            detector_dark_rate=_get(ro, "readout", "detector_dark_rate_per_us"),
            window_us=_get(ro, "readout", "window_us"),
            t1_readout_us=_get(ro, "readout", "t1_readout_us"),
            threshold=_get(ro, "readout", "threshold", int),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid readout block: {exc}") from exc

    endur = _section(mapping, "endurance")
    seed = mapping.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (stochastic readout is always seeded)")

    return RunConfig(
        spin_params=spin_params,
        working_branch=branch,
        nuclear_zeeman_target_mhz=target,
        mw_rabi_mhz=_get(drive, "drive", "mw_rabi_mhz"),
        rf_rabi_mhz=_get(drive, "drive", "rf_rabi_mhz"),
        noise=_noise_from(_section(mapping, "noise"), "noise"),
        epsilon=epsilon,
        init_max_attempts=int(init.get("max_attempts", 20)),
        readout=readout,
        endurance_noise=_noise_from(endur, "endurance"),
        endurance_gate_time_us=float(endur.get("gate_time_us", 0.1)),
        endurance_n_max=int(endur.get("n_max", 2000)),
        sweeps=_section(mapping, "sweeps"),
        seed=int(seed),
        mapping=mapping,
    )


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    mapping = default_mapping()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError(f"top level of {p} must be a mapping")
        mapping = _deep_merge(mapping, user)
    if overrides:
        mapping = _deep_merge(mapping, overrides)
    return from_mapping(mapping)
