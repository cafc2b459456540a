"""Command-line interface.

Every subcommand writes deterministic CSV/JSON/DOT files into ``--out``;
``--plot`` additionally renders PNG figures next to them. Exit codes: 0 on
success, 1 on invalid input, 2 when a reconstruction or protocol fails.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io as nio
from .compiler import CompileError, compile_level_swap, compile_permutation
from .levels import (
    EXPERIMENTAL_TOL,
    SIM_TOL,
    ReconstructionError,
    diagram_labels,
    export_dot,
    reconstruct_levels,
    verify_diagram,
)
from .protocols import (
    ProtocolError,
    ProtocolScript,
    ScriptError,
    apply_cnnot,
    apply_cswap,
    coherence_report,
    execute_script,
    ladder_permutation,
    prepare_pops,
    prepare_sallt,
    run_entanglement_transfer,
)
from .pulses import readout_spectrum
from .spins import DEFAULT_THRESHOLD, LabelingError, SpinModel, SpinSystemError
from .state import equilibrium_state
from .zcosy import extract_connectivity, merge_experiments, simulate_hetzcosy, symmetrize

log = logging.getLogger("nmrqip")

VALIDATION_ERRORS = (nio.ParseError, SpinSystemError, LabelingError, ScriptError, KeyError, ValueError)
FAILURES = (ReconstructionError, ProtocolError, CompileError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage problems are validation errors (exit 1); exit 2 is reserved for run failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _angle(text: str) -> float:
    from .protocols import parse_angle

    try:
        x = parse_angle(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not 0 < x < math.pi / 2:
        raise argparse.ArgumentTypeError(f"angle must lie in (0, pi/2), got {text}")
    return x


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", type=Path, help="spin-system TOML (default: bundled 5-spin placeholder)")
        p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                       help="relative intensity below which transitions are dropped (default %(default)s)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default %(default)s)")
    p.add_argument("--plot", action="store_true", help="also render PNG figures next to the data files")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nmrqip", description="Oriented-spin NMR simulator and quantum-information protocols.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("spectrum", help="equilibrium 1D spectra, one CSV per species")
    _common(p)
    p.add_argument("--angle", type=_angle, default=math.pi / 20, help="readout flip angle (default pi/20)")
    p.add_argument("--linewidth", type=float, default=1.0, help="Lorentzian FWHM in Hz for plots")

    p = sub.add_parser("zcosy", help="simulate, merge and symmetrize HET-Z-COSY peak lists")
    _common(p)
    p.add_argument("--alpha", type=_angle, default=math.pi / 20, help="first small flip angle (default pi/20)")
    p.add_argument("--beta", type=_angle, default=math.pi / 20, help="readout flip angle (default pi/20)")

    p = sub.add_parser("mapdiagram", help="reconstruct, verify and export the energy-level diagram")
    _common(p)
    p.add_argument("--peaks", type=Path, help="symmetrized peak-list CSV (default: simulate from the config)")
    p.add_argument("--transitions", type=Path, help="transition CSV (id,freq_hz,species); needed with --peaks")
    p.add_argument("--n-spins", type=int, help="expected spin count (default: from the config)")
    p.add_argument("--tol", type=float, help=f"energy closure tolerance in Hz (default {SIM_TOL} simulated, "
                                             f"{EXPERIMENTAL_TOL} with --peaks)")
    p.add_argument("--coupling-sign", choices=["auto", "positive", "negative", "none"], default="auto",
                   help="sign of the summed zz coupling, fixing the global reflection "
                        "(auto: from the config when simulating, else negative)")
    p.add_argument("--exhaustive", action="store_true", help="count all consistent diagrams")
    p.add_argument("--lenient", action="store_true", help="allow level sharing without a listed cross peak")

    p = sub.add_parser("pops", help="pair of pseudopure states on one transition")
    _common(p)
    p.add_argument("--transition", default="00000-10000", help="transition id or label pair (default %(default)s)")
    p.add_argument("--angle", type=_angle, default=math.pi / 20, help="readout flip angle")

    p = sub.add_parser("sallt", help="subsystem pseudopure state by spatial averaging")
    _common(p)
    p.add_argument("--transition", default="00000-10000", help="heteronuclear transition (default %(default)s)")
    p.add_argument("--angle", type=_angle, default=math.pi / 20, help="readout flip angle")
    p.add_argument("--flip-error", type=float, default=0.0, help="relative pulse-angle error")

    p = sub.add_parser("gate", help="controlled gates from selective pi pulses")
    p.add_argument("kind", choices=["cnnot", "cswap"])
    _common(p)
    p.add_argument("--transition", default="11110-11111", help="cnnot transition (default %(default)s)")
    p.add_argument("--sequence", help="cswap transitions a,b,a (ids or label pairs separated by commas)")
    p.add_argument("--swap", default="11110,11101", help="cswap level labels to compile when --sequence is absent")
    p.add_argument("--from-pops", help="start from the POPS state of this transition instead of equilibrium")
    p.add_argument("--no-crush", action="store_true", help="skip the crusher after each pi pulse")
    p.add_argument("--angle", type=_angle, default=math.pi / 20, help="readout flip angle")

    p = sub.add_parser("entangle", help="entanglement creation and transfer with fidelity and coherence report")
    _common(p)
    p.add_argument("--flip-error", type=float, nargs="+", default=[0.0], help="one or more relative angle errors")
    p.add_argument("--fidelity-floor", type=float, default=0.5, help="flag stages below this fidelity")
    p.add_argument("--domain", choices=["0", "1"], default="1", help="heteronuclear domain bit (default 1)")

    p = sub.add_parser("compile", help="compile a level swap or permutation into selective pi pulses")
    _common(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--swap", help="two levels (labels or indices) separated by a comma")
    g.add_argument("--permutation", help="comma-separated dest list: content of level i moves to entry i")
    p.add_argument("--no-crush", action="store_true", help="omit crushers from the emitted script")

    p = sub.add_parser("script", help="run a protocol script file")
    p.add_argument("script", type=Path)
    _common(p)
    p.add_argument("--flip-error", type=float, default=0.0, help="relative angle error on every pulse")
    p.add_argument("--angle", type=_angle, default=math.pi / 20, help="readout flip angle")
    return parser


# --- helpers ----------------------------------------------------------------------------


def _model(args) -> SpinModel:
    sys_ = nio.parse_config(args.config) if args.config else nio.placeholder_system()
    return SpinModel(sys_, args.threshold)


def _write(out: Path, name: str, data: str | bytes, written: list[Path]) -> None:
    written.append(nio.atomic_write(out / name, data))


def _pops_record(state, labels, tol: float = 1e-12) -> dict:
    pops = state.populations
    return {labels.label(k): float(p) for k, p in enumerate(pops) if abs(p) > tol}


def _readouts(state, model, angle, out, prefix, written):
    spectra = []
    for sp in model.system.species_order:
        spec = readout_spectrum(state, sp, angle)
        spectra.append(spec)
        _write(out, f"{prefix}_{sp}.csv", spec.to_csv(), written)
    return spectra


def _level(model, text: str) -> int:
    text = text.strip()
    if text.isdigit() and len(text) != model.system.n_spins:
        return int(text)
    return model.labels.level(text)


# --- subcommands -------------------------------------------------------------------------


def cmd_spectrum(args, written):
    model = _model(args)
    eq = equilibrium_state(model)
    spectra = []
    for sp in model.system.species_order:
        spec = readout_spectrum(eq, sp, args.angle, args.linewidth)
        spectra.append(spec)
        _write(args.out, f"spectrum_{sp}.csv", spec.to_csv(), written)
    _write(args.out, "transitions.csv", nio.transitions_csv(model.transitions), written)
    if args.plot:
        from .plotting import plot_spectra

        written.append(plot_spectra(spectra, args.out / "spectrum.png"))
    return 0


def cmd_zcosy(args, written):
    model = _model(args)
    lists = []
    for sp in model.system.species_order:
        pl = simulate_hetzcosy(model, sp, args.alpha, args.beta)
        lists.append(pl)
        _write(args.out, f"zcosy_{sp}.csv", nio.peaklist_csv(pl), written)
    merged = symmetrize(merge_experiments(lists))
    _write(args.out, "zcosy_symmetrized.csv", nio.peaklist_csv(merged), written)
    conn = extract_connectivity(merged, model.transitions.ids)
    _write(args.out, "connectivity.csv", nio.connectivity_csv(conn), written)
    _write(args.out, "transitions.csv", nio.transitions_csv(model.transitions), written)
    if args.plot:
        from .plotting import plot_peaks

        written.append(plot_peaks(merged, args.out / "zcosy.png"))
    return 0


def cmd_mapdiagram(args, written):
    model = None
    if args.peaks:
        if not args.transitions:
            raise ValueError("--peaks needs --transitions")
        peaks = nio.parse_peaklist(args.peaks)
        transitions = nio.parse_transitions(args.transitions)
        tol = args.tol if args.tol is not None else EXPERIMENTAL_TOL
        n_spins = args.n_spins
        if args.config:
            model = _model(args)
            n_spins = n_spins or model.system.n_spins
    else:
        model = _model(args)
        from .zcosy import full_hetzcosy

        peaks = full_hetzcosy(model)
        transitions = list(model.transitions)
        tol = args.tol if args.tol is not None else SIM_TOL
        n_spins = args.n_spins or model.system.n_spins
    sign = {"positive": 1, "negative": -1, "none": None}.get(args.coupling_sign)
    if args.coupling_sign == "auto":
        sign = (model.system.net_coupling_sign() or None) if model is not None else -1
    conn = extract_connectivity(peaks, [t.id for t in transitions])
    diagram = reconstruct_levels(
        transitions, conn, n_spins=n_spins, tol=tol, exhaustive=args.exhaustive,
        strict=not args.lenient, coupling_sign=sign,
    )
    report = verify_diagram(diagram, transitions, tol)
    labels = None
    if model is not None and not args.peaks:
        try:
            labels = diagram_labels(diagram, model.transitions, model.labels)
        except ValueError:
            labels = None
    species = sorted({t.species for t in transitions})
    record = {
        "diagram": diagram.to_record(),
        "verify": report.to_record(),
        "coupling_sign": sign,
        "partition": {sp: diagram.partition(sp) for sp in species},
        "labels": {str(k): v for k, v in sorted(labels.items())} if labels else None,
    }
    _write(args.out, "levels.json", nio.dumps_json(record), written)
    _write(args.out, "levels.dot", export_dot(diagram, labels), written)
    _write(args.out, "connectivity.csv", nio.connectivity_csv(conn), written)
    if args.plot:
        from .plotting import plot_levels

        written.append(plot_levels(diagram, args.out / "levels.png"))
    if not report.ok:
        log.error("diagram verification failed: %s", report.to_record())
        return 2
    return 0


def cmd_pops(args, written):
    model = _model(args)
    t = model.resolve_transition(args.transition)
    state = prepare_pops(model, t.id)
    rec = {"transition_id": t.id, "levels": [model.labels.label(t.upper), model.labels.label(t.lower)],
           "populations": _pops_record(state, model.labels)}
    _write(args.out, "pops.json", nio.dumps_json(rec), written)
    spectra = _readouts(state, model, args.angle, args.out, "pops_readout", written)
    if args.plot:
        from .plotting import plot_spectra

        written.append(plot_spectra(spectra, args.out / "pops_readout.png"))
    return 0


def cmd_sallt(args, written):
    model = _model(args)
    t = model.resolve_transition(args.transition)
    state = prepare_sallt(model, t.id, args.flip_error)
    pops = state.populations
    rec = {"transition_id": t.id, "levels": [model.labels.label(t.upper), model.labels.label(t.lower)],
           "flip_error": args.flip_error,
           "populations": {model.labels.label(k): float(p) for k, p in enumerate(pops)}}
    _write(args.out, "sallt.json", nio.dumps_json(rec), written)
    spectra = _readouts(state, model, args.angle, args.out, "sallt_readout", written)
    if args.plot:
        from .plotting import plot_populations

        written.append(plot_populations(rec["populations"], args.out / "sallt.png", "SALLT populations"))
    return 0


def cmd_gate(args, written):
    model = _model(args)
    labels = model.labels
    start = prepare_pops(model, args.from_pops) if args.from_pops else equilibrium_state(model)
    crush_mode = None if args.no_crush else "all"
    if args.kind == "cnnot":
        t = model.resolve_transition(args.transition)
        state = apply_cnnot(start, t.id, labels, crush_mode)
        seq = [t.id]
    else:
        if args.sequence:
            seq = [model.resolve_transition(s).id for s in args.sequence.split(",")]
        else:
            a, b = (_level(model, x) for x in args.swap.split(","))
            seq = list(compile_level_swap(model.transitions, a, b, model.dim).transitions)
            if len(seq) != 3:
                raise ProtocolError(f"levels {args.swap} need a {len(seq)}-pulse sequence, not a 3-pulse ladder")
        state = apply_cswap(start, seq, labels, crush_mode)
    from .compiler import sequence_permutation

    perm = ladder_permutation(model, seq) if args.kind == "cswap" else sequence_permutation(model.transitions, seq, model.dim)
    moved = {labels.label(i): labels.label(d) for i, d in enumerate(perm) if d != i}
    rec = {"gate": args.kind, "sequence": seq, "moved": moved,
           "before": _pops_record(start, labels), "after": _pops_record(state, labels)}
    _write(args.out, f"gate_{args.kind}.json", nio.dumps_json(rec), written)
    spectra = _readouts(state, model, args.angle, args.out, f"gate_{args.kind}_readout", written)
    if args.plot:
        from .plotting import plot_spectra

        written.append(plot_spectra(spectra, args.out / f"gate_{args.kind}_readout.png"))
    return 0


def cmd_entangle(args, written):
    model = _model(args)
    runs = {}
    for eps in args.flip_error:
        run = run_entanglement_transfer(model, eps, args.fidelity_floor, args.domain)
        runs[nio.fmt(eps)] = run
    rec = {"runs": [run.to_record(model.labels) for run in runs.values()]}
    _write(args.out, "entangle.json", nio.dumps_json(rec), written)
    if args.plot:
        from .plotting import plot_fidelities

        written.append(plot_fidelities({f"eps={k}": r.fidelities for k, r in runs.items()},
                                       args.out / "entangle_fidelity.png"))
    for k, r in runs.items():
        if r.flagged:
            log.warning("flip error %s: stages below fidelity floor: %s", k, r.flagged)
    return 0


def cmd_compile(args, written):
    model = _model(args)
    labels = model.labels
    if args.swap:
        parts = args.swap.split(",")
        if len(parts) != 2:
            raise ValueError("--swap needs exactly two levels")
        a, b = (_level(model, x) for x in parts)
        seq = compile_level_swap(model.transitions, a, b, model.dim)
    else:
        dest = [int(x) for x in args.permutation.split(",")]
        seq = compile_permutation(model.transitions, dest)
    rec = {
        "transitions": list(seq.transitions),
        "length": seq.length,
        "moved": {labels.label(i): labels.label(d) for i, d in enumerate(seq.net_permutation) if d != i},
    }
    _write(args.out, "sequence.json", nio.dumps_json(rec), written)
    _write(args.out, "sequence.script", seq.to_script(None if args.no_crush else "all"), written)
    return 0


def cmd_script(args, written):
    model = _model(args)
    try:
        text = args.script.read_text(encoding="utf-8")
    except OSError as exc:
        raise nio.ParseError(f"{args.script}: {exc.strerror}") from None
    script = ProtocolScript.parse(text, str(args.script))
    script.resolve(model, str(args.script))
    result = execute_script(script, model, flip_error=args.flip_error)
    labels = model.labels
    rec = {
        "flip_error": args.flip_error,
        "final": {"populations": _pops_record(result.state, labels),
                  "coherences": coherence_report(result.state, labels).to_record()},
        "snapshots": {tag: _pops_record(st, labels) for tag, st in sorted(result.snapshots.items())
                      if tag != "equilibrium"},
    }
    _write(args.out, "script.json", nio.dumps_json(rec), written)
    spectra = _readouts(result.state, model, args.angle, args.out, "script_readout", written)
    if args.plot:
        from .plotting import plot_spectra

        written.append(plot_spectra(spectra, args.out / "script_readout.png"))
    return 0


COMMANDS = {
    "spectrum": cmd_spectrum,
    "zcosy": cmd_zcosy,
    "mapdiagram": cmd_mapdiagram,
    "pops": cmd_pops,
    "sallt": cmd_sallt,
    "gate": cmd_gate,
    "entangle": cmd_entangle,
    "compile": cmd_compile,
    "script": cmd_script,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    written: list[Path] = []
    try:
        code = COMMANDS[args.command](args, written)
    except FAILURES as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    for path in written:
        log.info("wrote %s", path)
    return code


def main() -> None:
    sys.exit(run())
