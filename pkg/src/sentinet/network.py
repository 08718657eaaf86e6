"""Dendritic river-network topology.

A network is a rooted tree of stream segments directed toward a single
outlet junction. Each segment carries a length (network units) and a
strictly positive additive-flow value that accumulates downstream;
ratios of additive values define the junction split weights used by the
tail-up covariance model. Sites on the network are addressed as
(segment id, offset from the segment's downstream end).

All distances here are hydrologic: measured along the channels, never
through the plane. The 2-D junction embedding is cosmetic (plots and
export only).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .rng import as_generator


@dataclass(frozen=True)
class Segment:
    id: int
    down: int  # junction at the downstream end ("parent" in the JSON schema)
    up: int  # junction at the upstream end ("child")
    length: float
    additive: float


@dataclass(frozen=True)
class NetworkLocation:
    """A site on the network: ``offset`` is measured from the downstream end."""

    segment: int
    offset: float


@dataclass(frozen=True)
class NetworkPath:
    """Segment ids ordered from a headwater segment down to the outlet."""

    segments: tuple[int, ...]
    total_length: float


class NetworkError(ValueError):
    pass


class RiverNetwork:
    """Immutable rooted segment tree with precomputed traversal indices."""

    def __init__(self, segments, outlet, coords=None):
        self.segments = tuple(
            s if isinstance(s, Segment) else Segment(*s) for s in segments
        )
        self.outlet = int(outlet)
        self.coords = dict(coords) if coords else {}
        self._seg = {s.id: s for s in self.segments}
        if len(self._seg) != len(self.segments):
            raise NetworkError("duplicate segment ids")
        self._validate_and_index()

    # -- construction ------------------------------------------------------

    def _validate_and_index(self):
        if not self.segments:
            raise NetworkError("network has no segments")
        junctions = {self.outlet}
        for s in self.segments:
            if s.length <= 0:
                raise NetworkError(f"segment {s.id}: nonpositive length")
            if s.additive <= 0:
                raise NetworkError(f"segment {s.id}: nonpositive additive value")
            junctions.add(s.down)
            junctions.add(s.up)

        # Each junction except the outlet is drained by exactly one segment.
        drain = {}
        for s in self.segments:
            if s.up in drain:
                raise NetworkError(f"junction {s.up} drained by more than one segment")
            drain[s.up] = s.id
        if self.outlet in drain:
            raise NetworkError("outlet junction has a draining segment")
        missing = junctions - set(drain) - {self.outlet}
        if missing:
            raise NetworkError(f"junctions with no draining segment: {sorted(missing)}")
        if len(junctions) != len(self.segments) + 1:
            raise NetworkError("segment graph is not a tree")
        self._drain = drain

        # Tributaries discharging into each junction, sorted for determinism.
        tribs = {j: [] for j in junctions}
        for s in self.segments:
            tribs[s.down].append(s.id)
        for j in tribs:
            tribs[j].sort()
        self._tributaries = tribs

        # Walk downstream from every junction to the outlet: distance, depth,
        # parent junction. Iterative with memoisation; detects cycles.
        self._junction_parent = {}
        self._junction_d2o = {self.outlet: 0.0}
        self._junction_depth = {self.outlet: 0}
        for j0 in junctions:
            chain = []
            j = j0
            while j not in self._junction_d2o:
                if j in chain:
                    raise NetworkError("cycle detected in segment graph")
                chain.append(j)
                seg = self._seg[drain[j]]
                self._junction_parent[j] = seg.down
                j = seg.down
            for j in reversed(chain):
                seg = self._seg[drain[j]]
                self._junction_d2o[j] = self._junction_d2o[seg.down] + seg.length
                self._junction_depth[j] = self._junction_depth[seg.down] + 1

        # Additive values must accumulate: a segment carries at least the sum
        # of its upstream tributaries.
        for s in self.segments:
            inflow = sum(self._seg[t].additive for t in tribs[s.up])
            if s.additive < inflow - 1e-9:
                raise NetworkError(
                    f"segment {s.id}: additive value {s.additive} below upstream sum {inflow}"
                )

    # -- basic queries -----------------------------------------------------

    def segment(self, sid: int) -> Segment:
        try:
            return self._seg[sid]
        except KeyError:
            raise NetworkError(f"unknown segment id {sid}") from None

    def validate_location(self, loc: NetworkLocation) -> Segment:
        seg = self.segment(loc.segment)
        if not (0.0 <= loc.offset <= seg.length):
            raise NetworkError(
                f"offset {loc.offset} outside segment {seg.id} of length {seg.length}"
            )
        return seg

    def headwater_segments(self) -> list[int]:
        return [s.id for s in self.segments if not self._tributaries[s.up]]

    def distance_to_outlet(self, loc: NetworkLocation) -> float:
        seg = self.validate_location(loc)
        return self._junction_d2o[seg.down] + loc.offset

    def _lca_junction(self, a: int, b: int) -> int:
        da, db = self._junction_depth[a], self._junction_depth[b]
        while da > db:
            a = self._junction_parent[a]
            da -= 1
        while db > da:
            b = self._junction_parent[b]
            db -= 1
        while a != b:
            a = self._junction_parent[a]
            b = self._junction_parent[b]
        return a

    def flow_connected(self, a: NetworkLocation, b: NetworkLocation) -> bool:
        """True iff water from one site passes through the other."""
        sa = self.validate_location(a)
        sb = self.validate_location(b)
        if sa.id == sb.id:
            return True
        lca = self._lca_junction(sa.up, sb.up)
        return lca == sa.up or lca == sb.up

    def stream_distance(self, a: NetworkLocation, b: NetworkLocation) -> float:
        """Hydrologic distance: along the flow route if connected, otherwise
        the total distance to the common downstream confluence."""
        sa = self.validate_location(a)
        sb = self.validate_location(b)
        d2o_a = self._junction_d2o[sa.down] + a.offset
        d2o_b = self._junction_d2o[sb.down] + b.offset
        if sa.id == sb.id:
            return abs(a.offset - b.offset)
        lca = self._lca_junction(sa.up, sb.up)
        if lca == sa.up or lca == sb.up:
            return abs(d2o_a - d2o_b)
        return d2o_a + d2o_b - 2.0 * self._junction_d2o[lca]

    def tailup_weight(self, a: NetworkLocation, b: NetworkLocation) -> float:
        """Junction split weight: sqrt of the upstream/downstream additive
        ratio for flow-connected sites, 0 otherwise, 1 on the diagonal."""
        if not self.flow_connected(a, b):
            return 0.0
        sa = self.segment(a.segment)
        sb = self.segment(b.segment)
        if self.distance_to_outlet(a) >= self.distance_to_outlet(b):
            upstream, downstream = sa, sb
        else:
            upstream, downstream = sb, sa
        return math.sqrt(upstream.additive / downstream.additive)

    # -- paths ---------------------------------------------------------------

    def enumerate_paths(self) -> list[NetworkPath]:
        """One path per headwater segment, each running down to the outlet."""
        paths = []
        for hid in sorted(self.headwater_segments()):
            ids = [hid]
            seg = self._seg[hid]
            while seg.down != self.outlet:
                seg = self._seg[self._drain[seg.down]]
                ids.append(seg.id)
            total = sum(self._seg[i].length for i in ids)
            paths.append(NetworkPath(tuple(ids), total))
        return paths

    def locate_on_path(self, path: NetworkPath, upstream_distance: float) -> NetworkLocation:
        """Map a distance upstream of the outlet (along ``path``) to a site."""
        if not (0.0 <= upstream_distance <= path.total_length + 1e-9):
            raise NetworkError(
                f"upstream distance {upstream_distance} outside path of length {path.total_length}"
            )
        base = 0.0
        for sid in reversed(path.segments):
            seg = self._seg[sid]
            if upstream_distance <= base + seg.length:
                return NetworkLocation(sid, min(upstream_distance - base, seg.length))
            base += seg.length
        seg = self._seg[path.segments[0]]
        return NetworkLocation(seg.id, seg.length)

    # -- pairwise geometry ---------------------------------------------------

    def pairwise_arrays(self, locations):
        """(distances, connected, weights) matrices over a list of sites."""
        p = len(locations)
        dist = np.zeros((p, p))
        conn = np.zeros((p, p), dtype=bool)
        wt = np.zeros((p, p))
        for i in range(p):
            conn[i, i] = True
            wt[i, i] = 1.0
            for j in range(i + 1, p):
                a, b = locations[i], locations[j]
                d = self.stream_distance(a, b)
                c = self.flow_connected(a, b)
                w = self.tailup_weight(a, b)
                dist[i, j] = dist[j, i] = d
                conn[i, j] = conn[j, i] = c
                wt[i, j] = wt[j, i] = w
        return dist, conn, wt

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "segments": [
                {
                    "id": s.id,
                    "parent": s.down,
                    "child": s.up,
                    "length": s.length,
                    "additive": s.additive,
                }
                for s in sorted(self.segments, key=lambda s: s.id)
            ],
            "outlet": self.outlet,
            "coords": {str(j): [float(x), float(y)] for j, (x, y) in sorted(self.coords.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RiverNetwork":
        segments = [
            Segment(int(s["id"]), int(s["parent"]), int(s["child"]),
                    float(s["length"]), float(s["additive"]))
            for s in d["segments"]
        ]
        coords = {int(j): tuple(xy) for j, xy in d.get("coords", {}).items()}
        return cls(segments, int(d["outlet"]), coords)

    @classmethod
    def from_json(cls, text: str) -> "RiverNetwork":
        return cls.from_dict(json.loads(text))


def generate_network(segment_count: int, rng_seed, length_range=(0.5, 1.5)) -> RiverNetwork:
    """Grow a random dendritic network with exactly ``segment_count`` segments.

    Starting from a single outlet reach, each step attaches a new segment at
    a uniformly chosen junction that has fewer than two upstream tributaries:
    attaching at a bare tip extends the channel, attaching at an occupied
    junction creates a confluence. Segment lengths are uniform in
    ``length_range``. Additive-flow values are Shreve magnitudes (1 at each
    headwater, summed at junctions). Deterministic given the seed.
    """
    if segment_count < 1:
        raise ValueError("segment_count must be >= 1")
    lo, hi = length_range
    if not (0 < lo <= hi):
        raise ValueError("invalid length_range")
    rng = as_generator(rng_seed)

    outlet = 0
    downs = [outlet]
    ups = [1]
    lengths = [float(rng.uniform(lo, hi))]
    indegree = {1: 0}
    candidates = [1]  # junctions (never the outlet) with < 2 tributaries
    next_junction = 2
    for _ in range(segment_count - 1):
        j = candidates[int(rng.integers(0, len(candidates)))]
        downs.append(j)
        ups.append(next_junction)
        lengths.append(float(rng.uniform(lo, hi)))
        indegree[j] += 1
        if indegree[j] >= 2:
            candidates.remove(j)
        indegree[next_junction] = 0
        candidates.append(next_junction)
        next_junction += 1

    # Shreve magnitude: resolve upstream-first by processing junctions in
    # decreasing creation order (a junction's tributaries are created later).
    children = {i: [] for i in range(segment_count)}
    seg_of_up = {ups[i]: i for i in range(segment_count)}
    for i in range(segment_count):
        if downs[i] != outlet:
            children[seg_of_up[downs[i]]].append(i)
    additive = [0.0] * segment_count
    for i in reversed(range(segment_count)):
        inflow = sum(additive[c] for c in children[i])
        additive[i] = inflow if inflow > 0 else 1.0

    # Cosmetic planar embedding: recursive layout, outlet at the origin.
    coords = {outlet: (0.0, 0.0)}
    half_spread = math.pi / 5.0
    stack = [(0, math.pi / 2.0)]  # (segment index, heading when walking upstream)
    while stack:
        i, heading = stack.pop()
        x0, y0 = coords[downs[i]]
        coords[ups[i]] = (
            x0 + lengths[i] * math.cos(heading),
            y0 + lengths[i] * math.sin(heading),
        )
        kids = sorted(children[i])
        if len(kids) == 1:
            jitter = float(rng.uniform(-0.3, 0.3))
            stack.append((kids[0], heading + jitter))
        elif len(kids) >= 2:
            for n, c in enumerate(kids):
                side = -1.0 if n == 0 else 1.0
                turn = side * float(rng.uniform(0.25, half_spread))
                stack.append((c, heading + turn))

    segments = [
        Segment(i, downs[i], ups[i], lengths[i], additive[i])
        for i in range(segment_count)
    ]
    return RiverNetwork(segments, outlet, coords)
