"""Grid data model, MATPOWER-style case parsing, and topology utilities.

All quantities are stored in per-unit on the system MVA base except
branch ratings, which stay in MW. The attack-side formulas treat a
branch as its series impedance; charging susceptance, tap ratios and
bus shunts are kept so the solved baseline matches the distributed
test systems.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

__all__ = [
    "Bus",
    "Branch",
    "Network",
    "CaseFileError",
    "DisconnectedNetworkError",
    "SlackBusError",
    "UnknownBusError",
    "UnknownBranchError",
    "parse_case",
    "load_bundled_case",
    "bundled_case_path",
    "is_islanding",
    "neighbors",
    "network_to_case_text",
    "network_to_json",
]


class CaseFileError(ValueError):
    """Malformed case file; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DisconnectedNetworkError(ValueError):
    pass


class SlackBusError(ValueError):
    pass


class UnknownBusError(KeyError):
    pass


class UnknownBranchError(KeyError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str                 # "slack" | "PV" | "PQ"
    load: complex             # P + jQ, per-unit
    voltage_setpoint: float   # per-unit magnitude (generator buses)
    has_generator: bool
    generation: complex = 0j  # scheduled generator output, per-unit
    shunt: complex = 0j       # Gs + jBs, per-unit


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    impedance: complex        # series Z, per-unit
    rating: float             # MW
    is_transformer: bool
    charging: float = 0.0     # total line charging susceptance, per-unit
    tap: float = 1.0          # off-nominal turns ratio (1.0 = none)
    protected: bool = False

    @property
    def admittance(self) -> complex:
        return 1.0 / self.impedance


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float
    reference_bus: int

    @property
    def n_b(self) -> int:
        return len(self.buses)

    @property
    def n_br(self) -> int:
        return len(self.branches)

    def bus(self, bus_id: int) -> Bus:
        if not 1 <= bus_id <= self.n_b:
            raise UnknownBusError(bus_id)
        return self.buses[bus_id - 1]

    def branch(self, branch_id: int) -> Branch:
        if not 1 <= branch_id <= self.n_br:
            raise UnknownBranchError(branch_id)
        return self.branches[branch_id - 1]

    def with_ratings(self, ratings: dict[int, float]) -> "Network":
        """Copy of the network with branch ratings (MW) overridden by id."""
        branches = tuple(
            Branch(br.id, br.from_bus, br.to_bus, br.impedance,
                   float(ratings.get(br.id, br.rating)), br.is_transformer,
                   br.charging, br.tap, br.protected)
            for br in self.branches
        )
        return Network(self.buses, branches, self.base_mva, self.reference_bus)

    def with_protected_lines(self, protected: set[int]) -> "Network":
        """Copy of the network with the given branch ids flagged protected."""
        branches = tuple(
            Branch(br.id, br.from_bus, br.to_bus, br.impedance, br.rating,
                   br.is_transformer, br.charging, br.tap, br.id in protected)
            for br in self.branches
        )
        return Network(self.buses, branches, self.base_mva, self.reference_bus)

    def without_branch(self, branch_id: int) -> "Network":
        """Copy with one branch removed (ids of the others preserved)."""
        self.branch(branch_id)
        branches = tuple(br for br in self.branches if br.id != branch_id)
        return Network(self.buses, branches, self.base_mva, self.reference_bus)


_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[", re.MULTILINE)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _parse_matrix(text: str, name: str, start: int):
    """Parse semicolon-terminated numeric rows until the closing bracket."""
    rows = []
    lineno = text.count("\n", 0, start) + 1
    body = text[start:]
    for offset, raw in enumerate(body.splitlines()):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("]"):
            return rows
        if not line.endswith(";"):
            raise CaseFileError(f"row in mpc.{name} not terminated by ';'",
                                lineno + offset)
        cells = line[:-1].split()
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise CaseFileError(f"non-numeric value in mpc.{name}: {exc}",
                                lineno + offset) from None
    raise CaseFileError(f"mpc.{name} matrix never closed", lineno)


def parse_case(text: str) -> Network:
    """Parse MATPOWER-style case text into a Network.

    Reads the bus (type, Pd, Qd), gen (bus, Pg, Vg, status) and branch
    (f, t, r, x, rateA, ratio, status) columns; everything else in the
    file is ignored. Loads and generation are converted to per-unit.
    """
    m = _SCALAR_RE.search(text)
    if m is None:
        raise CaseFileError("missing mpc.baseMVA")
    base_mva = float(m.group(1))

    tables = {}
    for m in _MATRIX_RE.finditer(text):
        name = m.group(1)
        if name in ("bus", "gen", "branch"):
            tables[name] = _parse_matrix(text, name, m.end())
    for required in ("bus", "gen", "branch"):
        if required not in tables:
            raise CaseFileError(f"missing mpc.{required} matrix")

    bus_rows = tables["bus"]
    n_b = len(bus_rows)
    ids = [int(r[0]) for r in bus_rows]
    if ids != list(range(1, n_b + 1)):
        raise CaseFileError("bus ids must be dense 1..n_b in order")

    gen_p = {}
    gen_q = {}
    gen_v = {}
    for row in tables["gen"]:
        if len(row) >= 8 and row[7] == 0:
            continue
        b = int(row[0])
        if not 1 <= b <= n_b:
            raise CaseFileError(f"generator references unknown bus {b}")
        gen_p[b] = gen_p.get(b, 0.0) + row[1]
        gen_q[b] = gen_q.get(b, 0.0) + row[2]
        gen_v[b] = row[5]

    kind_map = {1: "PQ", 2: "PV", 3: "slack"}
    buses = []
    slack_ids = []
    for row in bus_rows:
        bus_id, bus_type = int(row[0]), int(row[1])
        if bus_type not in kind_map:
            raise CaseFileError(f"bus {bus_id}: unknown bus type {bus_type}")
        if row[2] < 0:
            raise CaseFileError(f"bus {bus_id}: negative real load")
        kind = kind_map[bus_type]
        if kind == "slack":
            slack_ids.append(bus_id)
        buses.append(Bus(
            id=bus_id,
            kind=kind,
            load=complex(row[2], row[3]) / base_mva,
            voltage_setpoint=gen_v.get(bus_id, 1.0),
            has_generator=bus_id in gen_p,
            generation=complex(gen_p.get(bus_id, 0.0), gen_q.get(bus_id, 0.0)) / base_mva,
            shunt=complex(row[4], row[5]) / base_mva if len(row) > 5 else 0j,
        ))
    if len(slack_ids) != 1:
        raise SlackBusError(f"expected exactly one slack bus, found {slack_ids}")

    branches = []
    for i, row in enumerate(tables["branch"], start=1):
        if len(row) >= 11 and row[10] == 0:
            continue
        f, t = int(row[0]), int(row[1])
        if not (1 <= f <= n_b and 1 <= t <= n_b):
            raise CaseFileError(f"branch {i}: endpoint outside 1..{n_b}")
        if f == t:
            raise CaseFileError(f"branch {i}: from_bus equals to_bus")
        z = complex(row[2], row[3])
        if abs(z) == 0:
            raise CaseFileError(f"branch {i}: zero impedance")
        rating = row[5] if len(row) > 5 else 0.0
        ratio = row[8] if len(row) > 8 else 0.0
        branches.append(Branch(
            id=len(branches) + 1,
            from_bus=f,
            to_bus=t,
            impedance=z,
            rating=float(rating),
            is_transformer=ratio != 0.0,
            charging=row[4] if len(row) > 4 else 0.0,
            tap=ratio if ratio != 0.0 else 1.0,
        ))

    net = Network(tuple(buses), tuple(branches), base_mva, slack_ids[0])
    if not _is_connected(net):
        raise DisconnectedNetworkError("bus graph is not connected")
    return net


def _adjacency(net: Network) -> dict[int, list[tuple[int, int]]]:
    adj = {b.id: [] for b in net.buses}
    for br in net.branches:
        adj[br.from_bus].append((br.id, br.to_bus))
        adj[br.to_bus].append((br.id, br.from_bus))
    return adj


def _reachable(net: Network, start: int, skip_branch: int | None = None) -> set[int]:
    adj = _adjacency(net)
    seen = {start}
    stack = [start]
    while stack:
        bus = stack.pop()
        for br_id, other in adj[bus]:
            if br_id == skip_branch or other in seen:
                continue
            seen.add(other)
            stack.append(other)
    return seen


def _is_connected(net: Network) -> bool:
    if net.n_b == 0:
        return False
    return len(_reachable(net, net.buses[0].id)) == net.n_b


def is_islanding(net: Network, branch_id: int) -> bool:
    """True iff removing the branch disconnects the bus graph."""
    br = net.branch(branch_id)
    return br.to_bus not in _reachable(net, br.from_bus, skip_branch=branch_id)


def neighbors(net: Network, bus_id: int) -> list[tuple[int, int]]:
    """Incident branches of a bus as (branch id, other-end bus id) pairs."""
    net.bus(bus_id)
    return sorted(_adjacency(net)[bus_id])


def network_to_json(net: Network) -> str:
    """Canonical JSON dump for debugging (--dump-network)."""
    data = {
        "base_mva": net.base_mva,
        "reference_bus": net.reference_bus,
        "buses": [
            {
                "id": b.id,
                "kind": b.kind,
                "load_mw": b.load.real * net.base_mva,
                "load_mvar": b.load.imag * net.base_mva,
                "voltage_setpoint": b.voltage_setpoint,
                "has_generator": b.has_generator,
                "generation_mw": b.generation.real * net.base_mva,
            }
            for b in net.buses
        ],
        "branches": [
            {
                "id": br.id,
                "from_bus": br.from_bus,
                "to_bus": br.to_bus,
                "r": br.impedance.real,
                "x": br.impedance.imag,
                "charging": br.charging,
                "tap": br.tap,
                "rating_mw": br.rating,
                "is_transformer": br.is_transformer,
                "protected": br.protected,
            }
            for br in net.branches
        ],
    }
    return json.dumps(data, indent=2)


def network_to_case_text(net: Network) -> str:
    """Serialize back to case text; parse(serialize(net)) == net."""
    lines = [
        "function mpc = case_export",
        "mpc.version = '2';",
        f"mpc.baseMVA = {net.base_mva:g};",
        "mpc.bus = [",
    ]
    type_code = {"PQ": 1, "PV": 2, "slack": 3}
    for b in net.buses:
        lines.append(
            f"\t{b.id}\t{type_code[b.kind]}\t{b.load.real * net.base_mva:.10g}"
            f"\t{b.load.imag * net.base_mva:.10g}"
            f"\t{b.shunt.real * net.base_mva:.10g}"
            f"\t{b.shunt.imag * net.base_mva:.10g}\t1\t1\t0\t0\t1\t1.06\t0.94;"
        )
    lines.append("];")
    lines.append("mpc.gen = [")
    for b in net.buses:
        if b.has_generator:
            lines.append(
                f"\t{b.id}\t{b.generation.real * net.base_mva:.10g}"
                f"\t{b.generation.imag * net.base_mva:.10g}\t0\t0"
                f"\t{b.voltage_setpoint:.10g}\t{net.base_mva:g}\t1\t0\t0;"
            )
    lines.append("];")
    lines.append("mpc.branch = [")
    for br in net.branches:
        ratio = br.tap if br.is_transformer else 0
        lines.append(
            f"\t{br.from_bus}\t{br.to_bus}\t{br.impedance.real:.10g}"
            f"\t{br.impedance.imag:.10g}\t{br.charging:.10g}"
            f"\t{br.rating:.10g}\t0\t0\t{ratio:.10g}\t0\t1;"
        )
    lines.append("];")
    return "\n".join(lines) + "\n"


def bundled_case_path(name: str):
    """Filesystem path of a bundled case file such as 'case14'."""
    from importlib.resources import files

    fname = name if name.endswith(".m") else name + ".m"
    return files("gridmask.cases").joinpath(fname)


def load_bundled_case(name: str) -> Network:
    return parse_case(bundled_case_path(name).read_text())
