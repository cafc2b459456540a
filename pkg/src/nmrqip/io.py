"""File formats: spin-system TOML configs, peak/transition/connectivity CSVs, atomic output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .spins import SpinSystem, SpinSystemError, build_spin_system

log = logging.getLogger(__name__)

SIG_DIGITS = 9

SPIN_KEYS = {"index", "species", "larmor_hz", "gamma_rel"}
COUPLING_KEYS = {"i", "j", "d_hz", "j_hz"}
PEAK_COLUMNS = ["omega1_hz", "omega2_hz", "t1_id", "t2_id", "amplitude", "species"]
TRANSITION_COLUMNS = ["id", "freq_hz", "species"]
CONNECTIVITY_COLUMNS = ["i", "j", "type"]


class ParseError(ValueError):
    """Malformed input file; the message carries the location and offending text."""


def fmt(x: float) -> str:
    """Fixed 9-significant-digit text for a float (``-0`` normalized to ``0``)."""
    s = f"{float(x):.{SIG_DIGITS}g}"
    return "0" if s in ("-0", "0") else s


def rounded(x: float) -> float:
    return float(fmt(x))


def rounded_tree(obj):
    """Round every float in a JSON-like tree to 9 significant digits."""
    if isinstance(obj, float):
        return rounded(obj)
    if isinstance(obj, dict):
        return {k: rounded_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded_tree(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(rounded_tree(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path: str | os.PathLike, data: str | bytes) -> Path:
    """Write via a temporary file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# --- spin-system configuration -------------------------------------------------


def parse_config_text(text: str, source: str = "<config>") -> SpinSystem:
    """Parse a TOML spin-system description.

    Expected layout::

        [[spins]]
        index = 1
        species = "F"
        larmor_hz = 6000.0
        gamma_rel = 0.94

        [[couplings]]
        i = 1
        j = 2
        d_hz = -250.0
        j_hz = 9.0
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{source}: {exc}") from None
    unknown = set(doc) - {"spins", "couplings"}
    if unknown:
        raise ParseError(f"{source}: unknown section(s) {sorted(unknown)}")
    spins = doc.get("spins")
    if not isinstance(spins, list) or not spins:
        raise ParseError(f"{source}: missing [[spins]] entries")
    couplings = doc.get("couplings", [])
    for kind, rows, allowed, required in (
        ("spins", spins, SPIN_KEYS, {"index", "species", "larmor_hz"}),
        ("couplings", couplings, COUPLING_KEYS, {"i", "j"}),
    ):
        for k, row in enumerate(rows, 1):
            if not isinstance(row, dict):
                raise ParseError(f"{source}: [[{kind}]] entry {k} is not a table")
            bad = set(row) - allowed
            if bad:
                raise ParseError(f"{source}: [[{kind}]] entry {k}: unknown key {sorted(bad)[0]!r}")
            missing = required - set(row)
            if missing:
                raise ParseError(f"{source}: [[{kind}]] entry {k}: missing key {sorted(missing)[0]!r}")
    try:
        return build_spin_system(spins, couplings)
    except (SpinSystemError, TypeError, ValueError) as exc:
        raise ParseError(f"{source}: {exc}") from None


def parse_config(path: str | os.PathLike) -> SpinSystem:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def config_text(sys: SpinSystem) -> str:
    """Serialize a :class:`SpinSystem` back to the TOML config layout."""
    out = []
    for k, (sp, g, nu) in enumerate(zip(sys.species, sys.gamma, sys.larmor), 1):
        out += ["[[spins]]", f"index = {k}", f'species = "{sp}"', f"larmor_hz = {nu!r}", f"gamma_rel = {g!r}", ""]
    for i, j in sys.pairs():
        out += [
            "[[couplings]]", f"i = {i + 1}", f"j = {j + 1}",
            f"d_hz = {sys.dipolar.get((i, j), 0.0)!r}", f"j_hz = {sys.scalar.get((i, j), 0.0)!r}", "",
        ]
    return "\n".join(out)


def placeholder_config_path() -> Path:
    return Path(__file__).parent / "data" / "placeholder_5spin.toml"


def placeholder_system() -> SpinSystem:
    return parse_config(placeholder_config_path())


# --- CSV tables ------------------------------------------------------------------


def _read_rows(path: str | os.PathLike, columns: list[str]) -> Iterable[tuple[int, dict]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    lines = [ln for ln in text.splitlines()]
    if not any(ln.strip() for ln in lines):
        log.warning("%s: empty file", path)
        return
    reader = csv.reader(io.StringIO(text))
    header = None
    for lineno, row in enumerate(reader, 1):
        if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
            continue
        if header is None:
            header = [c.strip() for c in row]
            missing = [c for c in columns if c not in header]
            if missing:
                raise ParseError(f"{path}:{lineno}: missing column(s) {missing} in header {header}")
            extra = [c for c in header if c not in columns and c not in ("upper", "lower", "intensity")]
            if extra:
                raise ParseError(f"{path}:{lineno}: unknown column(s) {extra}")
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}: {','.join(row)!r}")
        yield lineno, dict(zip(header, (c.strip() for c in row)))


def _num(value: str, kind, where: str, line: str):
    try:
        x = kind(value)
    except ValueError:
        raise ParseError(f"{where}: bad value {value!r} in row {line!r}") from None
    if kind is float and not math.isfinite(x):
        raise ParseError(f"{where}: non-finite value in row {line!r}")
    return x


def parse_peaklist(path: str | os.PathLike):
    """Read a 2D peak list CSV (``omega1_hz, omega2_hz, t1_id, t2_id, amplitude, species``)."""
    from .zcosy import Peak, PeakList2D

    peaks = []
    for lineno, row in _read_rows(path, PEAK_COLUMNS):
        where = f"{path}:{lineno}"
        line = ",".join(row.values())
        peaks.append(
            Peak(
                _num(row["omega1_hz"], float, where, line),
                _num(row["omega2_hz"], float, where, line),
                _num(row["t1_id"], int, where, line),
                _num(row["t2_id"], int, where, line),
                _num(row["amplitude"], float, where, line),
                row["species"],
            )
        )
    try:
        return PeakList2D.from_peaks(peaks)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def peaklist_csv(peaks) -> str:
    rows = [",".join(PEAK_COLUMNS)]
    for p in peaks.entries:
        rows.append(f"{fmt(p.omega1)},{fmt(p.omega2)},{p.t1_id},{p.t2_id},{fmt(p.amplitude)},{p.species}")
    return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class TransitionRecord:
    """A transition known only by id, line position and species (experimental input)."""

    id: int
    freq: float
    species: str


def parse_transitions(path: str | os.PathLike) -> list[TransitionRecord]:
    out, seen = [], set()
    for lineno, row in _read_rows(path, TRANSITION_COLUMNS):
        where = f"{path}:{lineno}"
        line = ",".join(row.values())
        tid = _num(row["id"], int, where, line)
        if tid in seen:
            raise ParseError(f"{where}: duplicate transition id {tid}")
        seen.add(tid)
        out.append(TransitionRecord(tid, _num(row["freq_hz"], float, where, line), row["species"]))
    return out


def transitions_csv(table) -> str:
    rows = ["id,freq_hz,species,upper,lower,intensity"]
    for t in table:
        rows.append(f"{t.id},{fmt(t.freq)},{t.species},{t.upper},{t.lower},{fmt(t.intensity)}")
    return "\n".join(rows) + "\n"


def parse_connectivity(path: str | os.PathLike, ids: Iterable[int]):
    from .zcosy import ConnectivityMatrix

    entries = {}
    for lineno, row in _read_rows(path, CONNECTIVITY_COLUMNS):
        where = f"{path}:{lineno}"
        line = ",".join(row.values())
        i, j = _num(row["i"], int, where, line), _num(row["j"], int, where, line)
        kind = row["type"]
        if kind not in ("progressive", "regressive"):
            raise ParseError(f"{where}: unknown connectivity type {kind!r}")
        if i == j:
            raise ParseError(f"{where}: self-connectivity ({i},{j})")
        key = (min(i, j), max(i, j))
        if entries.get(key, kind) != kind:
            raise ParseError(f"{where}: conflicting types for pair {key}")
        entries[key] = kind
    try:
        return ConnectivityMatrix(tuple(sorted(set(ids))), entries)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def connectivity_csv(conn) -> str:
    rows = [",".join(CONNECTIVITY_COLUMNS)]
    rows += [f"{i},{j},{kind}" for (i, j), kind in sorted(conn.entries.items())]
    return "\n".join(rows) + "\n"
