"""SNDlib native-format parsing into a topology and per-pair demand series.

Network files carry ``NODES``, ``LINKS`` and optionally ``DEMANDS`` sections;
a dynamic demand archive is one ``DEMANDS`` document per snapshot, with the
snapshot instant encoded in the file name (``...-YYYYMMDD-HHMM.txt``).
"""

from __future__ import annotations

import io
import json
import logging
import re
import tarfile
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class ParseError(ValueError):
    """Malformed input document; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(ValueError):
    """Well-formed input that violates a model invariant."""


class EmptyArchiveError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    longitude: float
    latitude: float


@dataclass(frozen=True)
class Link:
    id: str
    endpoint_a: str
    endpoint_b: str
    capacity: float
    routing_cost: float


@dataclass(frozen=True)
class Arc:
    """One direction of an undirected link."""

    link_id: str
    tail: str
    head: str
    capacity: float
    routing_cost: float


@dataclass(frozen=True)
class Topology:
    name: str
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    connected: bool = field(default=False)
    warnings: int = field(default=0, compare=False)

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        dup = [k for k, c in Counter(ids).items() if c > 1]
        if dup:
            raise ValidationError(f"duplicate node id(s): {', '.join(sorted(dup))}")
        known = set(ids)
        link_ids = [lk.id for lk in self.links]
        dup = [k for k, c in Counter(link_ids).items() if c > 1]
        if dup:
            raise ValidationError(f"duplicate link id(s): {', '.join(sorted(dup))}")
        for lk in self.links:
            for end in (lk.endpoint_a, lk.endpoint_b):
                if end not in known:
                    raise ValidationError(f"link {lk.id} references unknown node {end!r}")
            if not lk.capacity > 0:
                raise ValidationError(f"link {lk.id} has non-positive capacity {lk.capacity}")
            if not lk.routing_cost >= 0:
                raise ValidationError(f"link {lk.id} has negative routing cost {lk.routing_cost}")

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def link(self, link_id: str) -> Link:
        for lk in self.links:
            if lk.id == link_id:
                return lk
        raise KeyError(link_id)

    def arcs(self) -> list[Arc]:
        """Both directions of every link, with equal capacity and cost."""
        out = []
        for lk in self.links:
            out.append(Arc(lk.id, lk.endpoint_a, lk.endpoint_b, lk.capacity, lk.routing_cost))
            out.append(Arc(lk.id, lk.endpoint_b, lk.endpoint_a, lk.capacity, lk.routing_cost))
        return out

    def is_connected(self) -> bool:
        return _connected(self.node_ids, [(lk.endpoint_a, lk.endpoint_b) for lk in self.links])


@dataclass(frozen=True, eq=False)
class DemandSeries:
    """Traffic of one origin-destination pair over time.

    ``values`` holds NaN where ``gaps`` is set (pair absent from that snapshot).
    """

    source: str
    target: str
    timestamps: np.ndarray
    values: np.ndarray
    gaps: np.ndarray
    cadence: int

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        gaps = np.asarray(self.gaps, dtype=bool)
        if ts.shape != vals.shape or ts.shape != gaps.shape or ts.ndim != 1:
            raise ValidationError("timestamps, values and gaps must be 1-D and equally long")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise ValidationError(f"timestamps of {self.pair} are not strictly increasing")
        ok = vals[~gaps]
        if np.any(np.isnan(ok)) or np.any(ok < 0):
            raise ValidationError(f"values of {self.pair} must be nonnegative where not flagged as gaps")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "gaps", gaps)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.source, self.target)

    @property
    def series_id(self) -> str:
        return f"{self.source}->{self.target}"

    @property
    def gap_count(self) -> int:
        return int(self.gaps.sum())

    def __eq__(self, other):
        if not isinstance(other, DemandSeries):
            return NotImplemented
        return (
            self.pair == other.pair
            and self.cadence == other.cadence
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.gaps, other.gaps)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# low-level SNDlib reading


_ENTRY = re.compile(r"^(?P<id>\S+)\s*\(\s*(?P<a>\S+)\s+(?P<b>\S+)\s*\)\s*(?P<rest>.*)$")
_KNOWN_SECTIONS = {"META", "NODES", "LINKS", "DEMANDS", "ADMISSIBLE_PATHS"}


def _sections(document: str) -> tuple[dict[str, list[tuple[int, str]]], int]:
    """Split a native document into ``{section: [(lineno, entry)]}``.

    Returns the sections and the number of unknown sections skipped.
    """
    sections: dict[str, list[tuple[int, str]]] = {}
    current: str | None = None
    unknown = 0
    for lineno, raw in enumerate(document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("?"):
            continue
        if current is None:
            m = re.match(r"^([A-Za-z_]+)\s*\($", line)
            if not m:
                raise ParseError(f"expected a section header like 'NODES (', got {line!r}", lineno)
            current = m.group(1).upper()
            if current not in _KNOWN_SECTIONS:
                unknown += 1
            if current in sections:
                raise ParseError(f"section {current} appears twice", lineno)
            sections[current] = []
            continue
        if line == ")":
            current = None
            continue
        sections[current].append((lineno, line))
    if current is not None:
        raise ParseError(f"section {current} is not closed", len(document.splitlines()))
    return sections, unknown


def _number(tok: str, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"{what}: expected a number, got {tok!r}", lineno) from None


def _split_rest(rest: str, lineno: int) -> tuple[list[str], list[str]]:
    """Plain tokens before an optional parenthesised group, and the group's tokens."""
    if "(" in rest:
        head, _, tail = rest.partition("(")
        if ")" not in tail:
            raise ParseError("unbalanced parenthesis", lineno)
        inner, _, after = tail.partition(")")
        extra = after.split()
        return head.split() + extra, inner.split()
    return rest.split(), []


def parse_topology(document: str, name: str | None = None) -> Topology:
    """Parse the NODES/LINKS sections of an SNDlib native network document.

    Link capacity is the pre-installed capacity, or the largest module
    capacity when nothing is pre-installed. A missing routing cost falls back
    to 1.0 (hop-count routing). Unknown sections and surplus tokens are
    skipped and counted in ``Topology.warnings``.
    """
    sections, warnings = _sections(document)
    if "NODES" not in sections:
        raise ParseError("document has no NODES section")
    if name is None:
        m = re.search(r"^#\s*network\s+(\S+)", document, re.MULTILINE)
        name = m.group(1) if m else "network"

    nodes = []
    for lineno, entry in sections["NODES"]:
        m = _ENTRY.match(entry)
        if not m:
            raise ParseError(f"malformed node entry {entry!r}", lineno)
        if m.group("rest"):
            warnings += 1
        nodes.append(
            Node(
                m.group("id"),
                _number(m.group("a"), lineno, "longitude"),
                _number(m.group("b"), lineno, "latitude"),
            )
        )

    links = []
    missing_cost = 0
    for lineno, entry in sections.get("LINKS", []):
        m = _ENTRY.match(entry)
        if not m:
            raise ParseError(f"malformed link entry {entry!r}", lineno)
        plain, modules = _split_rest(m.group("rest"), lineno)
        nums = [_number(t, lineno, "link attribute") for t in plain]
        mods = [_number(t, lineno, "module attribute") for t in modules]
        if len(nums) > 4:
            warnings += len(nums) - 4
        capacity = nums[0] if nums else 0.0
        if capacity <= 0 and mods:
            capacity = max(mods[0::2])
        if len(nums) >= 3:
            cost = nums[2]
        else:
            cost = 1.0
            missing_cost += 1
        links.append(Link(m.group("id"), m.group("a"), m.group("b"), capacity, cost))
    if missing_cost:
        logger.warning("%d link(s) without routing cost; using 1.0", missing_cost)
        warnings += missing_cost
    if warnings:
        logger.warning("topology %s: %d unknown attribute(s) ignored", name, warnings)

    topo = Topology(name, tuple(nodes), tuple(links), warnings=warnings)
    return replace(topo, connected=topo.is_connected())


def parse_demand_matrix(document: str) -> dict[tuple[str, str], float]:
    """One snapshot: ``{(source, target): value}``; repeated pairs are summed."""
    sections, _ = _sections(document)
    out: dict[tuple[str, str], float] = {}
    for lineno, entry in sections.get("DEMANDS", []):
        m = _ENTRY.match(entry)
        if not m:
            raise ParseError(f"malformed demand entry {entry!r}", lineno)
        plain, _ = _split_rest(m.group("rest"), lineno)
        if len(plain) < 2:
            raise ParseError("demand entry needs routing unit and value", lineno)
        value = _number(plain[1], lineno, "demand value")
        if value < 0:
            raise ParseError(f"negative demand value {value}", lineno)
        key = (m.group("a"), m.group("b"))
        out[key] = out.get(key, 0.0) + value
    return out


def parse_demand_archive(
    documents: Sequence[str],
    timestamps: Sequence[int],
    topology: Topology | None = None,
) -> list[DemandSeries]:
    """Assemble per-pair series from a set of demand snapshots.

    Snapshots are sorted by timestamp first, so input order does not matter.
    A pair missing from a snapshot gets a gap flag (and NaN) at that instant.
    Output is sorted by (source, target).
    """
    if len(documents) == 0:
        raise EmptyArchiveError("demand archive contains no snapshots")
    if len(documents) != len(timestamps):
        raise ValidationError(f"{len(documents)} documents but {len(timestamps)} timestamps")
    ts = np.asarray(timestamps, dtype=np.int64)
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    if ts.size > 1 and np.any(np.diff(ts) <= 0):
        raise ValidationError("snapshot timestamps must be distinct")
    matrices = [parse_demand_matrix(documents[i]) for i in order]

    pairs = sorted({p for m in matrices for p in m})
    if topology is not None:
        known = set(topology.node_ids)
        bad = sorted({n for p in pairs for n in p if n not in known})
        if bad:
            raise ValidationError(f"demand archive references node(s) absent from topology: {', '.join(bad)}")

    cadence = infer_cadence(ts)
    n = ts.size
    out = []
    for pair in pairs:
        vals = np.full(n, np.nan)
        for i, m in enumerate(matrices):
            v = m.get(pair)
            if v is not None:
                vals[i] = v
        out.append(DemandSeries(pair[0], pair[1], ts.copy(), vals, np.isnan(vals), cadence))
    return out


def infer_cadence(timestamps) -> int:
    """Modal step between consecutive timestamps (smallest on ties); 0 for one sample."""
    ts = np.asarray(timestamps, dtype=np.int64)
    if ts.size < 2:
        return 0
    steps, counts = np.unique(np.diff(ts), return_counts=True)
    return int(steps[np.argmax(counts)])


# ---------------------------------------------------------------------------
# files


_STAMP = re.compile(r"(\d{8})[-_](\d{4})")


def timestamp_from_name(name: str) -> int:
    """UTC seconds from a ``YYYYMMDD-HHMM`` token in a file name."""
    m = _STAMP.search(Path(name).name)
    if not m:
        raise ParseError(f"no YYYYMMDD-HHMM timestamp in file name {name!r}")
    dt = datetime.strptime(m.group(1) + m.group(2), "%Y%m%d%H%M").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def read_demand_snapshots(path: str | Path) -> tuple[list[str], list[int]]:
    """Read every snapshot from a directory or a tar archive (``.tar``, ``.tgz``, ``.tar.gz``)."""
    path = Path(path)
    docs: list[str] = []
    stamps: list[int] = []
    if path.is_dir():
        for f in sorted(path.iterdir()):
            if f.is_file() and _STAMP.search(f.name):
                docs.append(f.read_text())
                stamps.append(timestamp_from_name(f.name))
    elif tarfile.is_tarfile(path):
        with tarfile.open(path) as tar:
            for member in sorted(tar.getmembers(), key=lambda m: m.name):
                if member.isfile() and _STAMP.search(member.name):
                    docs.append(tar.extractfile(member).read().decode())
                    stamps.append(timestamp_from_name(member.name))
    else:
        raise FileNotFoundError(f"demand archive not found or unsupported: {path}")
    if not docs:
        raise EmptyArchiveError(f"no timestamped snapshot files in {path}")
    return docs, stamps


def load_topology(path: str | Path) -> Topology:
    path = Path(path)
    return parse_topology(path.read_text(), name=None)


def load_demands(path: str | Path, topology: Topology | None = None) -> list[DemandSeries]:
    docs, stamps = read_demand_snapshots(path)
    return parse_demand_archive(docs, stamps, topology)


# ---------------------------------------------------------------------------
# serialisation


def topology_to_dict(topo: Topology) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": topo.name,
        "connected": topo.connected,
        "nodes": [{"id": n.id, "longitude": n.longitude, "latitude": n.latitude} for n in topo.nodes],
        "links": [
            {
                "id": lk.id,
                "endpoint_a": lk.endpoint_a,
                "endpoint_b": lk.endpoint_b,
                "capacity": lk.capacity,
                "routing_cost": lk.routing_cost,
            }
            for lk in topo.links
        ],
    }


def topology_from_dict(d: dict) -> Topology:
    nodes = tuple(Node(n["id"], float(n["longitude"]), float(n["latitude"])) for n in d["nodes"])
    links = tuple(
        Link(lk["id"], lk["endpoint_a"], lk["endpoint_b"], float(lk["capacity"]), float(lk["routing_cost"]))
        for lk in d["links"]
    )
    topo = Topology(d["name"], nodes, links)
    return replace(topo, connected=topo.is_connected())


def topology_to_json(topo: Topology) -> str:
    return json.dumps(topology_to_dict(topo), indent=2) + "\n"


def topology_from_json(text: str) -> Topology:
    return topology_from_dict(json.loads(text))


def topology_to_native(topo: Topology) -> str:
    """Write a topology back in SNDlib native form (NODES and LINKS only)."""
    buf = io.StringIO()
    buf.write("?SNDlib native format; type: network; version: 1.0\n")
    buf.write(f"# network {topo.name}\n\nNODES (\n")
    for n in topo.nodes:
        buf.write(f"  {n.id} ( {n.longitude!r} {n.latitude!r} )\n")
    buf.write(")\n\nLINKS (\n")
    for lk in topo.links:
        buf.write(f"  {lk.id} ( {lk.endpoint_a} {lk.endpoint_b} ) {lk.capacity!r} 0.0 {lk.routing_cost!r} 0.0 ( )\n")
    buf.write(")\n")
    return buf.getvalue()


def demands_to_json(series: Iterable[DemandSeries]) -> str:
    items = []
    for s in series:
        items.append(
            {
                "source": s.source,
                "target": s.target,
                "cadence": s.cadence,
                "timestamps": s.timestamps.tolist(),
                "values": [None if g else float(v) for v, g in zip(s.values, s.gaps)],
            }
        )
    return json.dumps({"schema_version": SCHEMA_VERSION, "series": items}, indent=1) + "\n"


def demands_from_json(text: str) -> list[DemandSeries]:
    d = json.loads(text)
    out = []
    for item in d["series"]:
        vals = np.array([np.nan if v is None else v for v in item["values"]], dtype=np.float64)
        out.append(
            DemandSeries(item["source"], item["target"], np.asarray(item["timestamps"]), vals, np.isnan(vals), item["cadence"])
        )
    return out


def _connected(nodes: list[str], edges: list[tuple[str, str]]) -> bool:
    if not nodes:
        return True
    adj: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {nodes[0]}
    todo = [nodes[0]]
    while todo:
        for nb in adj[todo.pop()]:
            if nb not in seen:
                seen.add(nb)
                todo.append(nb)
    return len(seen) == len(nodes)
