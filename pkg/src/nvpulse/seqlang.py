"""A small textual language for pulse programs (`.seq` files).

One statement per line, `#` starts a comment, durations take an optional
`us` suffix:

    init 3us
    mw pi @A
    rf pi @C phase 1.5708 rabi 5
    rf pi/2 @freq:127.44
    wait 10us
    repeat_init 5
    readout 3us

Statements: ``init <dur>``, ``mw|rf <angle> @<target> [phase <rad>]
[rabi <MHz>]``, ``wait <dur>``, ``readout <dur>``, ``repeat_init <n>``.
Angles are ``pi``, ``pi/2`` or a radian literal; targets are a transition
letter A-D or ``freq:<MHz>``. A readout, if present, must be the final
statement. Parsing never raises: malformed input comes back as positioned
diagnostics. ``format_program`` produces a canonical text (LF endings,
explicit frequencies normalized to 6 significant digits) whose re-parse
is structurally identical to the program.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .pulses import PulseSpec
from .spinmodel import TRANSITION_CHANNELS, TransitionTable

_TOKEN = re.compile(r"\S+")
_TRANSITION_NAMES = ("A", "B", "C", "D")


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class InitStep:
    duration_us: float


@dataclass(frozen=True)
class WaitStep:
    duration_us: float


@dataclass(frozen=True)
class ReadoutStep:
    window_us: float


@dataclass(frozen=True)
class RepeatInitStep:
    max_attempts: int


@dataclass(frozen=True)
class PulseStep:
    channel: str
    angle_rad: float
    target: str | None = None
    carrier_mhz: float | None = None
    phase_rad: float = 0.0
    rabi_mhz: float | None = None


Step = InitStep | WaitStep | ReadoutStep | RepeatInitStep | PulseStep


@dataclass(frozen=True)
class SequenceProgram:
    steps: tuple[Step, ...]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class ParseResult:
    program: SequenceProgram | None
    diagnostics: tuple[ParseDiagnostic, ...]

    @property
    def ok(self) -> bool:
        return self.program is not None


class SequenceError(Exception):
    """Validation failure; carries the positioned diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = tuple(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


def _parse_duration(tok: str) -> float:
    return float(tok[:-2] if tok.endswith("us") else tok)


def _parse_angle(tok: str) -> float:
    if tok == "pi":
        return math.pi
    if tok == "pi/2":
        return math.pi / 2.0
    return float(tok)


def _parse_pulse(word: str, col0: int, args: list[tuple[str, int]], err) -> PulseStep | None:
    if len(args) < 2:
        err(col0, f"'{word}' needs an angle and a target")
        return None
    angle_tok, angle_col = args[0]
    target_tok, target_col = args[1]
    try:
        angle = _parse_angle(angle_tok)
    except ValueError:
        err(angle_col, f"malformed angle {angle_tok!r} (expected pi, pi/2 or radians)")
        return None
    if angle < 0:
        err(angle_col, "pulse angle must be non-negative")
        return None
    if not target_tok.startswith("@"):
        err(target_col, f"expected @<transition> or @freq:<MHz>, got {target_tok!r}")
        return None
    body = target_tok[1:]
    target: str | None = None
    carrier: float | None = None
    if body.startswith("freq:"):
        try:
            carrier = float(body[5:])
        except ValueError:
            err(target_col, f"malformed frequency in {target_tok!r}")
            return None
        if carrier <= 0:
            err(target_col, "explicit carrier frequency must be positive")
            return None
    elif body in _TRANSITION_NAMES:
        target = body
    else:
        err(target_col, f"unknown transition {body!r} (expected A, B, C, D or freq:<MHz>)")
        return None

    phase = 0.0
    rabi: float | None = None
    rest = args[2:]
    k = 0
    while k < len(rest):
        key, key_col = rest[k]
        if key not in ("phase", "rabi"):
            err(key_col, f"unknown pulse option {key!r}")
            return None
        if k + 1 >= len(rest):
            err(key_col, f"option '{key}' needs a value")
            return None
        val_tok, val_col = rest[k + 1]
        try:
            value = float(val_tok)
        except ValueError:
            err(val_col, f"malformed number {val_tok!r}")
            return None
        if key == "phase":
            phase = value
        else:
            if value < 0:
                err(val_col, "Rabi frequency must be non-negative")
                return None
            rabi = value
        k += 2
    return PulseStep(word, angle, target, carrier, phase, rabi)


def parse(text: str) -> ParseResult:
    """Parse source text; returns the program or positioned diagnostics."""
    steps: list[Step] = []
    diags: list[ParseDiagnostic] = []
    readout_seen_at: int | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens = [(m.group(0), m.start() + 1) for m in _TOKEN.finditer(line)]
        if not tokens:
            continue

        def err(col: int, msg: str, _lineno=lineno):
            diags.append(ParseDiagnostic(_lineno, col, msg))

        if readout_seen_at is not None:
            err(tokens[0][1],
                f"statement after readout (readout on line {readout_seen_at} must be final)")

        word, col0 = tokens[0]
        args = tokens[1:]
        if word in ("init", "wait", "readout"):
            if len(args) != 1:
                err(col0, f"'{word}' takes exactly one duration argument")
                continue
            tok, col = args[0]
            try:
                dur = _parse_duration(tok)
            except ValueError:
                err(col, f"malformed duration {tok!r}")
                continue
            if dur < 0:
                err(col, f"negative duration {tok!r}")
                continue
            if word == "init":
                steps.append(InitStep(dur))
            elif word == "wait":
                steps.append(WaitStep(dur))
            else:
                steps.append(ReadoutStep(dur))
                readout_seen_at = lineno
        elif word == "repeat_init":
            if len(args) != 1:
                err(col0, "'repeat_init' takes exactly one attempt count")
                continue
            tok, col = args[0]
            try:
                n = int(tok)
            except ValueError:
                err(col, f"malformed attempt count {tok!r}")
                continue
            if n < 1:
                err(col, "attempt count must be >= 1")
                continue
            steps.append(RepeatInitStep(n))
        elif word in ("mw", "rf"):
            step = _parse_pulse(word, col0, args, err)
            if step is not None:
                steps.append(step)
        else:
            err(col0, f"unknown statement {word!r}")

    program = SequenceProgram(tuple(steps)) if not diags else None
    return ParseResult(program, tuple(diags))


def _fmt_num(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def _fmt_angle(angle: float) -> str:
    if angle == math.pi:
        return "pi"
    if angle == math.pi / 2.0:
        return "pi/2"
    return _fmt_num(angle)


def format_program(program: SequenceProgram) -> str:
    """Canonical text; the empty program formats to the empty string."""
    lines: list[str] = []
    for step in program.steps:
        if isinstance(step, InitStep):
            lines.append(f"init {_fmt_num(step.duration_us)}us")
        elif isinstance(step, WaitStep):
            lines.append(f"wait {_fmt_num(step.duration_us)}us")
        elif isinstance(step, ReadoutStep):
            lines.append(f"readout {_fmt_num(step.window_us)}us")
        elif isinstance(step, RepeatInitStep):
            lines.append(f"repeat_init {step.max_attempts}")
        elif isinstance(step, PulseStep):
            target = step.target if step.target is not None else f"freq:{step.carrier_mhz:.6g}"
            parts = [step.channel, _fmt_angle(step.angle_rad), f"@{target}"]
            if step.phase_rad != 0.0:
                parts.append(f"phase {_fmt_num(step.phase_rad)}")
            if step.rabi_mhz is not None:
                parts.append(f"rabi {_fmt_num(step.rabi_mhz)}")
            lines.append(" ".join(parts))
        else:  # pragma: no cover
            raise TypeError(f"unknown step {step!r}")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class BoundProgram:
    """A validated program: every pulse resolved to an executable spec."""

    steps: tuple[InitStep | WaitStep | ReadoutStep | RepeatInitStep | PulseSpec, ...]


def validate(program: SequenceProgram, table: TransitionTable,
             mw_rabi_mhz: float, rf_rabi_mhz: float) -> BoundProgram:
    """Bind symbolic targets against a transition table.

    Checks channel/transition consistency (`rf @A` is rejected), that a
    readout is final, and that angle-form pulses have a usable Rabi
    frequency. Raises :class:`SequenceError` with positioned diagnostics.
    """
    diags: list[ParseDiagnostic] = []
    bound: list = []
    for idx, step in enumerate(program.steps, start=1):
        if isinstance(step, ReadoutStep) and idx != len(program.steps):
            diags.append(ParseDiagnostic(idx, 1, "readout must be the final step"))
        if not isinstance(step, PulseStep):
            bound.append(step)
            continue
        if step.target is not None:
            expected = TRANSITION_CHANNELS[step.target]
            if expected != step.channel:
                diags.append(ParseDiagnostic(
                    idx, 1,
                    f"channel mismatch: transition {step.target} is a "
                    f"{expected.upper()} line, statement says {step.channel.upper()}"))
                continue
        rabi = step.rabi_mhz if step.rabi_mhz is not None else (
            mw_rabi_mhz if step.channel == "mw" else rf_rabi_mhz)
        if rabi <= 0:
            diags.append(ParseDiagnostic(
                idx, 1, "unrealizable pulse: angle form with zero Rabi frequency"))
            continue
        try:
            spec = PulseSpec.by_angle(step.channel, step.target, step.angle_rad,
                                      rabi, step.phase_rad,
                                      carrier_mhz=step.carrier_mhz)
            # resolve now so unknown/mismatched targets surface here
            from .pulses import resolve_target
            resolve_target(spec, table)
        except ValueError as exc:
            diags.append(ParseDiagnostic(idx, 1, str(exc)))
            continue
        bound.append(spec)
    if diags:
        raise SequenceError(diags)
    return BoundProgram(tuple(bound))
