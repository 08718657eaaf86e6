"""Designs and design spaces for sensor placement.

A design is an ordered set of sensor coordinates. Two admissible spaces
are supported: free 2-D points inside a rectangle, and network-path
placement where each sensor lives on a fixed root-to-headwater path and
is governed by a single coordinate, its distance upstream of the outlet.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .network import NetworkPath, RiverNetwork
from .rng import as_generator


@dataclass(frozen=True)
class Design:
    """Coordinate matrix (n_points, n_coords); network designs also carry the
    per-point path assignment, fixed for the lifetime of the design."""

    coords: np.ndarray
    path_ids: tuple | None = None

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coords, dtype=float))
        object.__setattr__(self, "coords", c)
        if self.path_ids is not None:
            object.__setattr__(self, "path_ids", tuple(int(p) for p in self.path_ids))
            if len(self.path_ids) != c.shape[0]:
                raise ValueError("path assignment length does not match point count")

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]

    @property
    def n_coords(self) -> int:
        return self.coords.shape[1]

    def get(self, i: int, j: int) -> float:
        return float(self.coords[i, j])

    def with_coordinate(self, i: int, j: int, value: float) -> "Design":
        c = self.coords.copy()
        c[i, j] = value
        return replace(self, coords=c)

    def to_dict(self) -> dict:
        d = {"coords": [[float(v) for v in row] for row in self.coords]}
        if self.path_ids is not None:
            d["path_ids"] = list(self.path_ids)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Design":
        return cls(np.asarray(d["coords"], dtype=float),
                   tuple(d["path_ids"]) if "path_ids" in d else None)


@dataclass(frozen=True)
class RectangleSpace:
    """Free placement of n points inside an axis-aligned rectangle."""

    bounds: tuple  # ((x_lo, x_hi), (y_lo, y_hi))
    n_points: int

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", b)
        for lo, hi in b:
            if not lo < hi:
                raise ValueError("empty interval in rectangle bounds")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")

    @property
    def n_coords(self) -> int:
        return len(self.bounds)

    def sample(self, rng_seed) -> Design:
        rng = as_generator(rng_seed)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return Design(rng.uniform(lo, hi, size=(self.n_points, len(self.bounds))))

    def domain(self, design: Design, i: int, j: int) -> tuple:
        return self.bounds[j]

    def contains(self, design: Design) -> bool:
        for j, (lo, hi) in enumerate(self.bounds):
            col = design.coords[:, j]
            if np.any(col < lo) or np.any(col > hi):
                return False
        return True

    def sites(self, design: Design) -> np.ndarray:
        return design.coords


@dataclass(frozen=True)
class NetworkPathSpace:
    """One coordinate per sensor: distance upstream of the outlet along the
    sensor's assigned path. Path assignments are drawn uniformly when a
    design is sampled and stay fixed during coordinate exchange."""

    network: RiverNetwork
    paths: tuple
    n_points: int

    def __post_init__(self):
        paths = tuple(self.paths)
        if not paths or not all(isinstance(p, NetworkPath) for p in paths):
            raise ValueError("paths must be a nonempty sequence of NetworkPath")
        object.__setattr__(self, "paths", paths)
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")

    @classmethod
    def from_network(cls, network: RiverNetwork, n_points: int) -> "NetworkPathSpace":
        return cls(network, tuple(network.enumerate_paths()), n_points)

    @property
    def n_coords(self) -> int:
        return 1

    def sample(self, rng_seed) -> Design:
        rng = as_generator(rng_seed)
        ids = rng.integers(0, len(self.paths), size=self.n_points)
        dists = np.array([rng.uniform(0.0, self.paths[p].total_length) for p in ids])
        return Design(dists[:, None], path_ids=tuple(int(p) for p in ids))

    def domain(self, design: Design, i: int, j: int) -> tuple:
        if design.path_ids is None:
            raise ValueError("network design lacks a path assignment")
        return (0.0, self.paths[design.path_ids[i]].total_length)

    def contains(self, design: Design) -> bool:
        if design.path_ids is None:
            return False
        for i in range(design.n_points):
            lo, hi = self.domain(design, i, 0)
            if not lo <= design.coords[i, 0] <= hi:
                return False
        return True

    def sites(self, design: Design) -> list:
        if design.path_ids is None:
            raise ValueError("network design lacks a path assignment")
        return [
            self.network.locate_on_path(self.paths[pid], float(design.coords[i, 0]))
            for i, pid in enumerate(design.path_ids)
        ]
