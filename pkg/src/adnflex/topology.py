"""Switch-configuration enumeration.

Binary line statuses are never handed to the optimizer: every connected
assignment over the switchable lines becomes its own fixed topology, and
off-lines are removed from the model entirely so the continuous subproblems
stay smooth.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from .network import Line, NetworkCase, reachable_buses


class EnumerationError(RuntimeError):
    """Raised when the switchable-line count makes enumeration unreasonable."""


#: Largest switchable-line count enumerated by default (2^12 assignments).
DEFAULT_SWITCHABLE_CAP = 12


@dataclass(frozen=True)
class Configuration:
    """An on/off assignment over the switchable lines.

    statuses maps line key ("from-to") to True (closed) / False (open);
    it covers exactly the case's switchable lines. The label is stable and
    human readable; `kind` is "radial" or "meshed" by cycle count.
    """

    label: str
    statuses: tuple[tuple[str, bool], ...]
    kind: str

    def status(self, line: Line) -> bool:
        if not line.switchable:
            return line.normal_status
        return dict(self.statuses)[line.key]

    def status_map(self) -> dict[str, bool]:
        return dict(self.statuses)


def effective_topology(case: NetworkCase, config: Configuration) -> list[Line]:
    """In-service lines under a configuration; open lines simply vanish."""
    kept = []
    for ln in case.lines:
        on = dict(config.statuses)[ln.key] if ln.switchable else ln.normal_status
        if on:
            kept.append(ln)
    return kept


def is_connected(case: NetworkCase, config: Configuration) -> bool:
    """True iff every bus is reachable from the interface bus over on-lines."""
    lines_on = effective_topology(case, config)
    ids = [b.id for b in case.buses]
    reach = reachable_buses(ids, lines_on, case.ref_bus)
    return len(reach) == len(ids)


def _label_for(case: NetworkCase, statuses: dict[str, bool]) -> str:
    """Deterministic label: "normal" for the normal statuses, "all-on" when
    every switch is closed, otherwise the sorted open-line keys."""
    normal = {ln.key: ln.normal_status for ln in case.switchable_lines}
    if all(statuses[k] == normal[k] for k in statuses):
        return "normal"
    opened = sorted(k for k in statuses if not statuses[k])
    if not opened:
        return "all-on"
    return "open-" + "+".join(opened)


def enumerate_configurations(
    case: NetworkCase, cap: int = DEFAULT_SWITCHABLE_CAP
) -> list[Configuration]:
    """All connected switch assignments, in lexicographic order over line keys.

    Assignments that isolate any bus from the interface are excluded. Raises
    EnumerationError when the switchable-line count exceeds `cap`.
    """
    switchable = sorted(case.switchable_lines, key=lambda ln: ln.key)
    if len(switchable) > cap:
        raise EnumerationError(
            f"too many switchable lines for enumeration: "
            f"{len(switchable)} > cap {cap}"
        )
    n_bus = len(case.buses)
    ids = [b.id for b in case.buses]
    fixed_on = [ln for ln in case.lines if not ln.switchable and ln.normal_status]

    configs: list[Configuration] = []
    # product with (True, False) per line, True first, gives lexicographic
    # order with all-on leading; the normal topology is always included
    # because a valid case is connected under it.
    for assignment in product((True, False), repeat=len(switchable)):
        statuses = {ln.key: on for ln, on in zip(switchable, assignment)}
        lines_on = fixed_on + [ln for ln in switchable if statuses[ln.key]]
        if len(reachable_buses(ids, lines_on, case.ref_bus)) != n_bus:
            continue
        kind = "radial" if len(lines_on) == n_bus - 1 else "meshed"
        configs.append(
            Configuration(
                label=_label_for(case, statuses),
                statuses=tuple(sorted(statuses.items())),
                kind=kind,
            )
        )
    return configs


def normal_configuration(case: NetworkCase) -> Configuration:
    """The configuration matching every switchable line's normal status."""
    statuses = {ln.key: ln.normal_status for ln in case.switchable_lines}
    lines_on = [
        ln
        for ln in case.lines
        if (statuses[ln.key] if ln.switchable else ln.normal_status)
    ]
    kind = "radial" if len(lines_on) == len(case.buses) - 1 else "meshed"
    return Configuration(
        label=_label_for(case, statuses),
        statuses=tuple(sorted(statuses.items())),
        kind=kind,
    )
