"""Demand routing and slice formation.

Each demand is routed on its minimum-cost path. Demands whose routes use the
same set of links form one slice; optionally, slices whose link footprints
overlap by Jaccard similarity >= ``theta`` are merged transitively.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import DemandSeries, Topology
from .preprocess import SeriesFrame

logger = logging.getLogger(__name__)

Pair = tuple[str, str]


class NoPathError(LookupError):
    pass


@dataclass(frozen=True)
class Route:
    demand: Pair
    path: tuple[str, ...]
    links: tuple[str, ...]
    cost: float


@dataclass(frozen=True)
class SliceDef:
    id: str
    member_demands: tuple[Pair, ...]
    link_footprint: tuple[str, ...]
    capacity: float

    @property
    def series(self) -> str:
        """Column name of the slice's aggregated series."""
        return self.id

    @property
    def member_columns(self) -> list[str]:
        return [f"{s}->{t}" for s, t in self.member_demands]


@dataclass(frozen=True)
class RoutingResult:
    routes: dict[Pair, Route]
    unreachable: tuple[Pair, ...]


def _adjacency(topology: Topology) -> dict[str, list[tuple[str, str, float]]]:
    adj: dict[str, list[tuple[str, str, float]]] = {n: [] for n in topology.node_ids}
    for arc in topology.arcs():
        adj[arc.tail].append((arc.head, arc.link_id, arc.routing_cost))
    for lst in adj.values():
        lst.sort(key=lambda e: (e[0], e[1]))
    return adj


def shortest_path(topology: Topology, source: str, target: str, _adj=None) -> Route:
    """Minimum-cost route from ``source`` to ``target``.

    Ties are broken by fewer hops, then by the lexicographically smallest
    node sequence, then by link ids, so the result is fully deterministic.
    """
    nodes = set(topology.node_ids)
    for n in (source, target):
        if n not in nodes:
            raise KeyError(f"unknown node {n!r}")
    if source == target:
        return Route((source, target), (), (), 0.0)
    adj = _adj if _adj is not None else _adjacency(topology)

    # label = (cost, hops, node path, link path); tuple order is the tie-break order
    best: dict[str, tuple] = {source: (0.0, 0, (source,), ())}
    heap = [best[source]]
    done: set[str] = set()
    while heap:
        label = heapq.heappop(heap)
        cost, hops, path, links = label
        u = path[-1]
        if u in done or best.get(u) != label:
            continue
        done.add(u)
        if u == target:
            return Route((source, target), path, links, cost)
        for v, link_id, w in adj[u]:
            if v in done:
                continue
            cand = (cost + w, hops + 1, path + (v,), links + (link_id,))
            cur = best.get(v)
            if cur is None or cand < cur:
                best[v] = cand
                heapq.heappush(heap, cand)
    raise NoPathError(f"no path from {source} to {target}")


def route_all(topology: Topology, demands: Iterable[DemandSeries | Pair]) -> RoutingResult:
    """Route every distinct demand pair; unreachable pairs are collected, not raised."""
    adj = _adjacency(topology)
    routes: dict[Pair, Route] = {}
    unreachable: list[Pair] = []
    for d in demands:
        pair = d.pair if isinstance(d, DemandSeries) else tuple(d)
        if pair in routes or pair in unreachable:
            continue
        try:
            routes[pair] = shortest_path(topology, pair[0], pair[1], _adj=adj)
        except (NoPathError, KeyError) as exc:
            logger.warning("demand %s->%s not routed: %s", pair[0], pair[1], exc)
            unreachable.append(pair)
    return RoutingResult(dict(sorted(routes.items())), tuple(sorted(unreachable)))


def jaccard(a: frozenset, b: frozenset) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def slice_id(members: Sequence[Pair]) -> str:
    key = "|".join(f"{s}->{t}" for s, t in sorted(members))
    return "slice-" + hashlib.sha1(key.encode()).hexdigest()[:10]


def form_slices(routes: Mapping[Pair, Route], topology: Topology, theta: float = 1.0) -> list[SliceDef]:
    """Group routed demands into slices.

    Demands with identical link sets always share a slice. With ``theta < 1``
    groups whose footprints have Jaccard similarity >= ``theta`` are merged,
    transitively. Slice capacity is the smallest capacity on its footprint.
    Output is ordered by each slice's first member.
    """
    if not routes:
        raise ValueError("form_slices needs at least one route")
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    groups: dict[frozenset, list[Pair]] = {}
    for pair in sorted(routes):
        r = routes[pair]
        if not r.links:
            logger.warning("demand %s->%s has an empty route and is left out of slicing", *pair)
            continue
        groups.setdefault(frozenset(r.links), []).append(pair)

    keys = sorted(groups, key=lambda k: groups[k][0])
    parent = list(range(len(keys)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if theta < 1.0:
        for i in range(len(keys)):
            for j in range(i + 1, len(keys)):
                if jaccard(keys[i], keys[j]) >= theta:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)

    merged: dict[int, tuple[list[Pair], set[str]]] = {}
    for i, k in enumerate(keys):
        members, links = merged.setdefault(find(i), ([], set()))
        members.extend(groups[k])
        links.update(k)

    slices = []
    for members, links in merged.values():
        members = sorted(members)
        footprint = tuple(sorted(links))
        capacity = min(topology.link(lk).capacity for lk in footprint)
        slices.append(SliceDef(slice_id(members), tuple(members), footprint, capacity))
    slices.sort(key=lambda s: s.member_demands[0])
    return slices


def slice_series(slices: Sequence[SliceDef], frame: SeriesFrame) -> SeriesFrame:
    """One column per slice: the sum of its member demand columns, in member order."""
    cols = []
    masks = []
    for sl in slices:
        missing = [c for c in sl.member_columns if c not in frame.columns]
        if missing:
            raise KeyError(f"slice {sl.id}: frame has no column for member(s) {missing}")
        idx = [frame.columns.index(c) for c in sl.member_columns]
        acc = frame.values[:, idx[0]].copy()
        for j in idx[1:]:
            acc = acc + frame.values[:, j]
        cols.append(acc)
        masks.append(np.logical_and.reduce([frame.mask[:, j] for j in idx]))
    return SeriesFrame(
        tuple(s.id for s in slices),
        frame.timestamps,
        np.stack(cols, axis=1) if cols else np.zeros((frame.n_rows, 0)),
        np.stack(masks, axis=1) if masks else np.zeros((frame.n_rows, 0), dtype=bool),
        frame.partial,
    )


# ---------------------------------------------------------------------------
# exports


def manifest_dict(slices: Sequence[SliceDef], routing: RoutingResult, theta: float) -> dict:
    return {
        "schema_version": 1,
        "theta": theta,
        "slices": [
            {
                "id": s.id,
                "members": [list(p) for p in s.member_demands],
                "footprint": list(s.link_footprint),
                "capacity": s.capacity,
                "routes": [
                    {"demand": list(p), "path": list(routing.routes[p].path), "cost": routing.routes[p].cost}
                    for p in s.member_demands
                ],
            }
            for s in slices
        ],
        "unrouted": [list(p) for p in routing.unreachable],
    }


def slices_from_manifest(d: dict) -> list[SliceDef]:
    return [
        SliceDef(s["id"], tuple(tuple(p) for p in s["members"]), tuple(s["footprint"]), float(s["capacity"]))
        for s in d["slices"]
    ]


def manifest_to_json(slices: Sequence[SliceDef], routing: RoutingResult, theta: float) -> str:
    return json.dumps(manifest_dict(slices, routing, theta), indent=2) + "\n"


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def to_dot(topology: Topology, slices: Sequence[SliceDef] = ()) -> str:
    """GraphViz source: nodes placed by coordinates, one coloured edge per slice and link."""
    out = [f'graph "{topology.name}" {{', "  layout=neato;", "  node [shape=circle, fontsize=10];"]
    for n in topology.nodes:
        out.append(f'  "{n.id}" [pos="{n.longitude!r},{n.latitude!r}!"];')
    for lk in topology.links:
        out.append(f'  "{lk.endpoint_a}" -- "{lk.endpoint_b}" [color="#bbbbbb", label="{lk.id}", fontsize=8];')
    for i, sl in enumerate(slices):
        color = _PALETTE[i % len(_PALETTE)]
        for lk_id in sl.link_footprint:
            lk = topology.link(lk_id)
            out.append(f'  "{lk.endpoint_a}" -- "{lk.endpoint_b}" [color="{color}", penwidth=2.5, tooltip="{sl.id}"];')
    out.append("}")
    return "\n".join(out) + "\n"


def all_pairs_costs(topology: Topology) -> dict[Pair, float]:
    """Shortest-path cost for every ordered node pair (inf when unreachable)."""
    adj = _adjacency(topology)
    out = {}
    for a in topology.node_ids:
        for b in topology.node_ids:
            try:
                out[(a, b)] = shortest_path(topology, a, b, _adj=adj).cost
            except NoPathError:
                out[(a, b)] = math.inf
    return out
