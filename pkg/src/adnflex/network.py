"""Network data model, case-file parsing and per-unit conversion.

All quantities are stored internally in per-unit on the case s_base; the
case-file format carries physical units (MW, MVAr, MVA) and converts at the
boundary so unit mistakes cannot leak into the solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace


class CaseError(ValueError):
    """Base class for case-file problems."""


class CaseSyntaxError(CaseError):
    """Malformed case text; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class CaseSemanticError(CaseError):
    """Structurally valid text that does not describe a usable network."""


@dataclass(frozen=True)
class Bus:
    """A network node with voltage band and fixed demand (p.u.)."""

    id: int
    v_min: float
    v_max: float
    p_d: float
    q_d: float


@dataclass(frozen=True)
class Line:
    """A series branch. r, x and s_max are p.u.; switchable lines carry
    a sectionalizing or tie switch and may be opened by a configuration."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    s_max: float
    switchable: bool = False
    normal_status: bool = True

    @property
    def key(self) -> str:
        """Stable identifier used in configurations and reports."""
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class Generator:
    """A dispatchable injection; exactly one per case is the reference
    (grid) generator at the interface bus. Bounds are p.u."""

    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    is_reference: bool = False


@dataclass(frozen=True)
class FlexUnit:
    """A flexible unit offering P/Q regulation around a zero pre-service
    operating point. Capacities are p.u.; prices are $/MWh and $/MVArh
    (per physical unit, not per p.u.)."""

    label: str
    bus: int
    p_up_max: float
    p_dn_max: float
    q_up_max: float
    q_dn_max: float
    cost_p: float
    cost_q: float


@dataclass(frozen=True)
class NetworkCase:
    """Immutable problem instance: buses, branches, generators and
    flexible units on a common MVA base."""

    s_base: float
    v_base: float
    ref_bus: int
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    flex_units: tuple[FlexUnit, ...]
    settings: tuple[tuple[str, float], ...] = ()

    def bus_index(self) -> dict[int, int]:
        """Map bus id -> position in self.buses."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def switchable_lines(self) -> tuple[Line, ...]:
        return tuple(ln for ln in self.lines if ln.switchable)

    @property
    def reference_generator(self) -> Generator:
        for g in self.generators:
            if g.is_reference:
                return g
        raise CaseSemanticError("case has no reference generator")


def line_admittance(line: Line) -> tuple[float, float]:
    """Series conductance/susceptance (G, B) of a branch.

    G = r / (r^2 + x^2), B = -x / (r^2 + x^2). Zero-impedance lines are
    rejected at parse time, so the denominator is nonzero here.
    """
    z2 = line.r * line.r + line.x * line.x
    if z2 == 0.0:
        raise CaseSemanticError(f"line {line.key} has zero impedance")
    return line.r / z2, -line.x / z2


def reachable_buses(
    bus_ids: list[int], lines: list[Line], start: int
) -> set[int]:
    """Bus ids reachable from `start` over the given lines (undirected)."""
    adjacency: dict[int, list[int]] = {b: [] for b in bus_ids}
    for ln in lines:
        if ln.from_bus in adjacency and ln.to_bus in adjacency:
            adjacency[ln.from_bus].append(ln.to_bus)
            adjacency[ln.to_bus].append(ln.from_bus)
    seen = {start}
    stack = [start]
    while stack:
        node = stack.pop()
        for nxt in adjacency.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def validate_case(case: NetworkCase) -> list[str]:
    """Check every structural invariant; return one diagnostic per violation.

    An empty list means the case is usable. Diagnostics name the invariant
    and the offending element so they can be surfaced verbatim by the CLI.
    """
    diags: list[str] = []
    ids = [b.id for b in case.buses]
    id_set = set(ids)
    if len(ids) != len(id_set):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        diags.append(f"duplicate bus ids: {dupes}")
    for b in case.buses:
        if not (0.0 < b.v_min < b.v_max):
            diags.append(f"voltage bounds inverted or nonpositive at bus {b.id}")
        if not (math.isfinite(b.p_d) and math.isfinite(b.q_d)):
            diags.append(f"non-finite demand at bus {b.id}")

    seen_pairs: set[frozenset[int]] = set()
    for ln in case.lines:
        if ln.from_bus == ln.to_bus:
            diags.append(f"line {ln.key} connects a bus to itself")
        if ln.from_bus not in id_set or ln.to_bus not in id_set:
            diags.append(f"line {ln.key} references an unknown bus")
        if ln.r < 0.0:
            diags.append(f"line {ln.key} has negative resistance")
        if abs(ln.r) + abs(ln.x) == 0.0:
            diags.append(f"line {ln.key} has zero impedance")
        if ln.s_max <= 0.0:
            diags.append(f"line {ln.key} has nonpositive rating")
        pair = frozenset((ln.from_bus, ln.to_bus))
        if pair in seen_pairs:
            diags.append(f"parallel line {ln.key} (merge parallel lines first)")
        seen_pairs.add(pair)

    ref_gens = [g for g in case.generators if g.is_reference]
    if len(ref_gens) != 1:
        diags.append(f"expected exactly one reference generator, found {len(ref_gens)}")
    elif ref_gens[0].bus != case.ref_bus:
        diags.append(
            f"reference generator sits at bus {ref_gens[0].bus}, "
            f"not at the interface bus {case.ref_bus}"
        )
    for g in case.generators:
        if g.bus not in id_set:
            diags.append(f"generator at unknown bus {g.bus}")
        if g.p_min > g.p_max or g.q_min > g.q_max:
            diags.append(f"generator at bus {g.bus} has inverted bounds")

    labels = [u.label for u in case.flex_units]
    if len(labels) != len(set(labels)):
        diags.append("duplicate flexible-unit labels")
    for u in case.flex_units:
        if u.bus not in id_set:
            diags.append(f"flex unit {u.label} at unknown bus {u.bus}")
        if min(u.p_up_max, u.p_dn_max, u.q_up_max, u.q_dn_max) < 0.0:
            diags.append(f"flex unit {u.label} has a negative capacity")
        if u.cost_p < 0.0 or u.cost_q < 0.0:
            diags.append(f"flex unit {u.label} has a negative price")

    if case.ref_bus not in id_set:
        diags.append(f"interface bus {case.ref_bus} is not in the bus table")
    elif not diags:
        # Connectivity only makes sense once ids resolve.
        normal = [ln for ln in case.lines if ln.normal_status]
        reach = reachable_buses(ids, normal, case.ref_bus)
        missing = sorted(id_set - reach)
        if missing:
            diags.append(f"normal topology disconnected: buses {missing} unreachable")
    return diags


# --- case-file format ------------------------------------------------------
#
# Section order is fixed; each table section starts with a header row naming
# its columns. Numbers use '.' decimals; booleans are yes/no, statuses on/off.

_META_KEYS = {"s_base_mva", "v_base_kv", "ref_bus", "impedance_units"}
_SETTINGS_KEYS = {"tol_kkt", "max_iter", "multistart"}
_SECTIONS = ("meta", "buses", "lines", "generators", "flex_units", "settings")
_COLUMNS = {
    "buses": ["id", "v_min", "v_max", "p_d_mw", "q_d_mvar"],
    "lines": ["from", "to", "r", "x", "s_max_mva", "switchable", "normal_status"],
    "generators": ["bus", "p_min", "p_max", "q_min", "q_max", "is_reference"],
    "flex_units": ["label", "bus", "p_up", "p_dn", "q_up", "q_dn", "cost_p", "cost_q"],
}


def _parse_bool(token: str, line_no: int) -> bool:
    low = token.lower()
    if low in ("yes", "true", "1", "on"):
        return True
    if low in ("no", "false", "0", "off"):
        return False
    raise CaseSyntaxError(line_no, f"expected a boolean, got {token!r}")


def _parse_float(token: str, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise CaseSyntaxError(line_no, f"expected a number, got {token!r}") from None
    if not math.isfinite(value):
        raise CaseSyntaxError(line_no, f"non-finite number {token!r}")
    return value


def _parse_int(token: str, line_no: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise CaseSyntaxError(line_no, f"expected an integer, got {token!r}") from None


def parse_case(text: str) -> NetworkCase:
    """Parse case-file text into a per-unit NetworkCase.

    Raises CaseSyntaxError (with line number) on malformed text and
    CaseSemanticError on dangling references, duplicates or a missing
    reference generator. Unknown sections, meta keys and table columns are
    rejected rather than ignored.
    """
    sections: dict[str, list[tuple[int, list[str]]]] = {}
    current: str | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise CaseSyntaxError(line_no, "unterminated section header")
            name = stripped[1:-1].strip()
            if name not in _SECTIONS:
                raise CaseSyntaxError(line_no, f"unknown section [{name}]")
            if name in sections:
                raise CaseSyntaxError(line_no, f"duplicate section [{name}]")
            sections[name] = []
            current = name
            continue
        if current is None:
            raise CaseSyntaxError(line_no, "content before the first section header")
        sections[current].append((line_no, stripped.split()))

    for required in ("meta", "buses", "lines", "generators"):
        if required not in sections:
            raise CaseSyntaxError(0, f"missing required section [{required}]")

    meta: dict[str, str] = {}
    for line_no, tokens in sections["meta"]:
        joined = " ".join(tokens)
        if "=" not in joined:
            raise CaseSyntaxError(line_no, "meta entries use 'key = value'")
        key, _, value = joined.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _META_KEYS:
            raise CaseSyntaxError(line_no, f"unknown meta key {key!r}")
        if key in meta:
            raise CaseSyntaxError(line_no, f"duplicate meta key {key!r}")
        if not value:
            raise CaseSyntaxError(line_no, f"meta key {key!r} has no value")
        meta[key] = value
    for required_key in ("s_base_mva", "v_base_kv", "ref_bus"):
        if required_key not in meta:
            raise CaseSyntaxError(0, f"missing meta key {required_key!r}")
    s_base = float(meta["s_base_mva"])
    v_base = float(meta["v_base_kv"])
    if s_base <= 0.0 or v_base <= 0.0:
        raise CaseSemanticError("s_base_mva and v_base_kv must be positive")
    ref_bus = int(meta["ref_bus"])
    impedance_units = meta.get("impedance_units", "pu")
    if impedance_units not in ("pu", "ohm"):
        raise CaseSemanticError(f"impedance_units must be pu or ohm, got {impedance_units!r}")
    z_base = v_base * v_base / s_base

    def rows(section: str) -> list[dict[str, tuple[str, int]]]:
        entries = sections.get(section, [])
        if not entries:
            return []
        header_no, header = entries[0]
        expected = _COLUMNS[section]
        if header != expected:
            raise CaseSyntaxError(
                header_no,
                f"[{section}] header must be exactly: {' '.join(expected)}",
            )
        out = []
        for line_no, tokens in entries[1:]:
            if len(tokens) != len(expected):
                raise CaseSyntaxError(
                    line_no,
                    f"expected {len(expected)} fields, got {len(tokens)}",
                )
            out.append({col: (tok, line_no) for col, tok in zip(expected, tokens)})
        return out

    buses = []
    for row in rows("buses"):
        buses.append(
            Bus(
                id=_parse_int(*row["id"]),
                v_min=_parse_float(*row["v_min"]),
                v_max=_parse_float(*row["v_max"]),
                p_d=_parse_float(*row["p_d_mw"]) / s_base,
                q_d=_parse_float(*row["q_d_mvar"]) / s_base,
            )
        )

    lines = []
    for row in rows("lines"):
        r = _parse_float(*row["r"])
        x = _parse_float(*row["x"])
        if impedance_units == "ohm":
            r, x = r / z_base, x / z_base
        line_no = row["r"][1]
        if abs(r) + abs(x) == 0.0:
            raise CaseSemanticError(f"line at input line {line_no} has zero impedance")
        lines.append(
            Line(
                from_bus=_parse_int(*row["from"]),
                to_bus=_parse_int(*row["to"]),
                r=r,
                x=x,
                s_max=_parse_float(*row["s_max_mva"]) / s_base,
                switchable=_parse_bool(*row["switchable"]),
                normal_status=_parse_bool(*row["normal_status"]),
            )
        )

    generators = []
    for row in rows("generators"):
        generators.append(
            Generator(
                bus=_parse_int(*row["bus"]),
                p_min=_parse_float(*row["p_min"]) / s_base,
                p_max=_parse_float(*row["p_max"]) / s_base,
                q_min=_parse_float(*row["q_min"]) / s_base,
                q_max=_parse_float(*row["q_max"]) / s_base,
                is_reference=_parse_bool(*row["is_reference"]),
            )
        )

    flex_units = []
    for row in rows("flex_units"):
        flex_units.append(
            FlexUnit(
                label=row["label"][0],
                bus=_parse_int(*row["bus"]),
                p_up_max=_parse_float(*row["p_up"]) / s_base,
                p_dn_max=_parse_float(*row["p_dn"]) / s_base,
                q_up_max=_parse_float(*row["q_up"]) / s_base,
                q_dn_max=_parse_float(*row["q_dn"]) / s_base,
                cost_p=_parse_float(*row["cost_p"]),
                cost_q=_parse_float(*row["cost_q"]),
            )
        )

    settings: dict[str, float] = {}
    for line_no, tokens in sections.get("settings", []):
        joined = " ".join(tokens)
        if "=" not in joined:
            raise CaseSyntaxError(line_no, "settings entries use 'key = value'")
        key, _, value = joined.partition("=")
        key = key.strip()
        if key not in _SETTINGS_KEYS:
            raise CaseSyntaxError(line_no, f"unknown settings key {key!r}")
        settings[key] = _parse_float(value.strip(), line_no)

    case = NetworkCase(
        s_base=s_base,
        v_base=v_base,
        ref_bus=ref_bus,
        buses=tuple(buses),
        lines=tuple(lines),
        generators=tuple(generators),
        flex_units=tuple(flex_units),
        settings=tuple(sorted(settings.items())),
    )

    diags = validate_case(case)
    if diags:
        raise CaseSemanticError("; ".join(diags))
    return case


def case_settings(case: NetworkCase) -> dict[str, float]:
    """Solver overrides from the case file's [settings] section, if any."""
    return dict(case.settings)


def _fmt(value: float) -> str:
    """Shortest decimal that round-trips the float exactly."""
    return repr(float(value))


def _fmt_scaled(pu: float, s_base: float) -> str:
    """Physical-unit string whose parse (divide by s_base) returns `pu` exactly.

    pu*s_base followed by division is not always an exact inverse in binary
    floating point, so nudge the written value by ulps until it is.
    """
    candidate = pu * s_base
    for _ in range(8):
        if candidate / s_base == pu:
            return repr(candidate)
        candidate = math.nextafter(candidate, math.inf if candidate / s_base < pu else -math.inf)
    return repr(pu * s_base)


def serialize_case(case: NetworkCase) -> str:
    """Render a NetworkCase back to case-file text (physical units).

    parse_case(serialize_case(c)) reproduces c exactly: conversions are a
    multiply/divide pair by the same base, and floats are written with
    round-trip precision.
    """
    s = case.s_base
    out = ["[meta]"]
    out.append(f"s_base_mva = {_fmt(case.s_base)}")
    out.append(f"v_base_kv = {_fmt(case.v_base)}")
    out.append(f"ref_bus = {case.ref_bus}")
    out.append("")
    out.append("[buses]")
    out.append(" ".join(_COLUMNS["buses"]))
    for b in case.buses:
        out.append(
            f"{b.id} {_fmt(b.v_min)} {_fmt(b.v_max)} "
            f"{_fmt_scaled(b.p_d, s)} {_fmt_scaled(b.q_d, s)}"
        )
    out.append("")
    out.append("[lines]")
    out.append(" ".join(_COLUMNS["lines"]))
    for ln in case.lines:
        out.append(
            f"{ln.from_bus} {ln.to_bus} {_fmt(ln.r)} {_fmt(ln.x)} {_fmt_scaled(ln.s_max, s)} "
            f"{'yes' if ln.switchable else 'no'} {'on' if ln.normal_status else 'off'}"
        )
    out.append("")
    out.append("[generators]")
    out.append(" ".join(_COLUMNS["generators"]))
    for g in case.generators:
        out.append(
            f"{g.bus} {_fmt_scaled(g.p_min, s)} {_fmt_scaled(g.p_max, s)} "
            f"{_fmt_scaled(g.q_min, s)} {_fmt_scaled(g.q_max, s)} "
            f"{'yes' if g.is_reference else 'no'}"
        )
    out.append("")
    out.append("[flex_units]")
    out.append(" ".join(_COLUMNS["flex_units"]))
    for u in case.flex_units:
        out.append(
            f"{u.label} {u.bus} {_fmt_scaled(u.p_up_max, s)} {_fmt_scaled(u.p_dn_max, s)} "
            f"{_fmt_scaled(u.q_up_max, s)} {_fmt_scaled(u.q_dn_max, s)} "
            f"{_fmt(u.cost_p)} {_fmt(u.cost_q)}"
        )
    settings = case_settings(case)
    if settings:
        out.append("")
        out.append("[settings]")
        for key in sorted(settings):
            out.append(f"{key} = {_fmt(settings[key])}")
    out.append("")
    return "\n".join(out)
