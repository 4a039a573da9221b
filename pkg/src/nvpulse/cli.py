"""Command-line interface.

Subcommands: ``levels``, ``run <file.seq>``, ``rabi``, ``echo``, ``crot``,
``tomography``, ``endurance``, ``readout-calibrate``. All outputs are
deterministic for a given configuration and seed; every run echoes its
effective configuration and a manifest (config hash + seed) into the
output directory.

Exit codes: 0 success, 1 invalid configuration or sequence, 2 bad usage,
3 simulation invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, experiments, readout, tomography
from .config import ConfigError, RunConfig, load_config
from .linops import InvariantViolation
from .pulses import NoiseParams
from .seqlang import SequenceError, parse
from .spinmodel import LabelingError, TRANSITION_PAIRS


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _emit_provenance(cfg: RunConfig, out_dir: Path, command: str) -> None:
    _write(out_dir, "effective_config.yaml", cfg.echo_yaml())
    manifest = {
        "command": command,
        "config_sha256": cfg.config_hash(),
        "seed": cfg.seed,
        "version": __version__,
    }
    _write(out_dir, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _csv(rows, header: tuple[str, ...]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def cmd_levels(cfg: RunConfig, args, out_dir: Path) -> int:
    reg = cfg.build_register()
    print("working levels (MHz):")
    chars = {1: "mS=branch, mI=+1/2", 2: "mS=branch, mI=-1/2",
             3: "mS=0, mI=+1/2", 4: "mS=0, mI=-1/2"}
    for n in (1, 2, 3, 4):
        print(f"  level {n} ({chars[n]}): {reg.levels.level_energy(n):.6f}")
    print("transitions:")
    for t in reg.table:
        i, j = t.levels
        print(f"  {t.name}: {i}<->{j}  {t.frequency_mhz:.6f} MHz  ({t.channel.upper()})")
    print(f"nuclear Zeeman splitting (3-4): {reg.levels.nuclear_zeeman_splitting():.6f} MHz")
    rows = [(t.name, t.levels[0], t.levels[1], t.frequency_mhz, t.channel) for t in reg.table]
    _write(out_dir, "transitions.csv", _csv(rows, ("transition", "level_i", "level_j",
                                                   "frequency_mhz", "channel")))
    return 0


def cmd_run(cfg: RunConfig, args, out_dir: Path) -> int:
    source = Path(args.sequence).read_text()
    result = parse(source)
    if not result.ok:
        for d in result.diagnostics:
            print(f"{args.sequence}:{d}", file=sys.stderr)
        return 1
    reg = cfg.build_register()
    prog = experiments.run_program(reg, result.program, cfg.noise, cfg.epsilon)
    final = prog.final_state.check()
    _write(out_dir, "rho.txt", tomography.dump_density_matrix(final))
    print(f"final bright population: {prog.bright_population:.6f}")
    if prog.readout_window_us is not None:
        sig = readout.averaged_signal(final, cfg.readout, args.cycles, cfg.seed)
        print(f"readout contrast over {args.cycles} cycles: "
              f"{sig.contrast:.6f} +/- {sig.std_error:.6f}")
        _write(out_dir, "readout.csv",
               _csv([(sig.cycles, sig.mean_count, sig.contrast, sig.std_error)],
                    ("cycles", "mean_count", "contrast", "std_error")))
    return 0


def cmd_rabi(cfg: RunConfig, args, out_dir: Path) -> int:
    reg = cfg.build_register()
    if args.transition == "A":
        result = experiments.electron_rabi(reg, cfg.noise)
    else:
        result = experiments.nuclear_rabi(reg, cfg.noise)
    tr = result.trace
    rows = zip(tr.durations_us, tr.populations)
    _write(out_dir, f"rabi_{args.transition}.csv", _csv(rows, ("duration_us", "population")))
    print(f"transition {args.transition}: fitted Rabi frequency "
          f"{tr.fitted_frequency_mhz:.6f} MHz, decay {tr.fitted_decay_us:.3f} us, "
          f"rms residual {tr.fit_residual:.3e}")
    return 0


def cmd_echo(cfg: RunConfig, args, out_dir: Path) -> int:
    reg = cfg.build_register()
    tau_max = float(cfg.sweeps.get("echo_tau_max_us", 15.0))
    points = int(cfg.sweeps.get("echo_points", 16))
    taus = np.linspace(0.0, tau_max, points)
    res = experiments.hahn_echo(reg, taus, taus, cfg.noise)
    diag = res.diagonal()
    rows = [(t, t, a, 2 * t) for t, a in zip(taus, diag)]
    _write(out_dir, "echo.csv", _csv(rows, ("tau1_us", "tau2_us", "amplitude", "total_delay_us")))
    print(f"echo amplitude at total delay {2 * tau_max:g} us: {diag[-1]:.6f}")
    return 0


def cmd_crot(cfg: RunConfig, args, out_dir: Path) -> int:
    reg = cfg.build_register()
    level = experiments.TABLE_INPUT_LEVELS[args.input]
    rho = experiments.prepare_input_state(reg, level, cfg.noise, cfg.epsilon)
    rho = experiments.crot(reg, rho, cfg.noise).check()
    ideal = experiments.ideal_crot_state(level)
    fid = tomography.fidelity(rho, ideal)
    _write(out_dir, "rho.txt", tomography.dump_density_matrix(rho))
    print(f"{fid:.6f}")
    return 0


def cmd_tomography(cfg: RunConfig, args, out_dir: Path) -> int:
    reg = cfg.build_register()
    inputs = (1, 2, 3, 4) if args.input == "all" else (int(args.input),)
    reports = experiments.crot_fidelity_table(reg, cfg.noise, cfg.epsilon, inputs)
    rows = []
    for idx, rep in zip(inputs, reports):
        rep.reconstructed.check()
        _write(out_dir, f"rho_input{idx}.txt",
               tomography.dump_density_matrix(rep.reconstructed))
        rows.append((idx, rep.fidelity))
        print(f"input {idx}: fidelity {rep.fidelity:.6f}")
    _write(out_dir, "fidelity.csv", _csv(rows, ("input_state", "fidelity")))
    return 0


def cmd_endurance(cfg: RunConfig, args, out_dir: Path) -> int:
    reg = cfg.build_register()
    res = experiments.gate_endurance(reg, cfg.endurance_n_max, cfg.endurance_noise,
                                     cfg.endurance_gate_time_us)
    step = max(1, len(res.counts) // 200)
    rows = zip(res.counts[::step], res.fidelities[::step])
    _write(out_dir, "endurance.csv", _csv(rows, ("gate_count", "fidelity")))
    print(f"1/e fidelity crossing: N* = {res.n_star:.1f} "
          f"(gate time {res.gate_time_us:g} us)")
    return 0


def cmd_readout_calibrate(cfg: RunConfig, args, out_dir: Path) -> int:
    th, acc = readout.calibrate_threshold(cfg.readout)
    print(f"optimal threshold: {th} counts (predicted fidelity {acc:.4f})")
    rows = [(t, readout.decision_accuracy(cfg.readout, t))
            for t in range(int(3 * cfg.readout.bright_rate * cfg.readout.window_us) + 1)]
    _write(out_dir, "readout_calibration.csv", _csv(rows, ("threshold", "accuracy")))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvpulse",
        description="Pulse-level simulator of an NV electron-nuclear spin register")
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--seed", type=int, help="override the RNG seed")
    parser.add_argument("--out", default="nvpulse-out", help="output directory")
    parser.add_argument("--format", choices=("csv",), default="csv",
                        help="tabular output format")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("levels", help="print energy levels and transitions")
    p_run = sub.add_parser("run", help="execute a .seq pulse program")
    p_run.add_argument("sequence")
    p_run.add_argument("--cycles", type=int, default=10000,
                       help="readout cycles when the program ends in a readout")
    p_rabi = sub.add_parser("rabi", help="Rabi nutation sweep")
    p_rabi.add_argument("--transition", choices=("A", "C"), required=True)
    sub.add_parser("echo", help="nuclear Hahn echo sweep")
    p_crot = sub.add_parser("crot", help="prepare an input, apply the gate, score it")
    p_crot.add_argument("--input", type=int, choices=(1, 2, 3, 4), required=True)
    p_tomo = sub.add_parser("tomography", help="gate tomography and fidelity table")
    p_tomo.add_argument("--input", default="all",
                        choices=("1", "2", "3", "4", "all"))
    sub.add_parser("endurance", help="fidelity vs repeated gate count")
    sub.add_parser("readout-calibrate", help="threshold scan of the readout model")
    return parser


_COMMANDS = {
    "levels": cmd_levels,
    "run": cmd_run,
    "rabi": cmd_rabi,
    "echo": cmd_echo,
    "crot": cmd_crot,
    "tomography": cmd_tomography,
    "endurance": cmd_endurance,
    "readout-calibrate": cmd_readout_calibrate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        out_dir = Path(args.out)
        _emit_provenance(cfg, out_dir, args.command)
        return _COMMANDS[args.command](cfg, args, out_dir)
    except (ConfigError, SequenceError, LabelingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
