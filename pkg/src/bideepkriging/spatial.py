"""Sites, paired observations, seeded splits and nearest-neighbour queries.

Coordinates live in an ``(N, 2)`` float array whose row order is the row
order of every matrix built from a :class:`SiteSet`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ArgumentError, ConfigurationError

CSV_HEADER = ("x", "y", "z1", "z2")


def as_site(s) -> np.ndarray:
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.shape != (2,):
        raise ArgumentError(f"a site has exactly two coordinates, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ArgumentError("site coordinates must be finite")
    return s


@dataclass(frozen=True, eq=False)
class SiteSet:
    """Ordered, immutable set of planar sites."""

    coords: np.ndarray
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        c = np.array(self.coords, dtype=float, copy=True)
        if c.ndim == 1 and c.size == 2:
            c = c.reshape(1, 2)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ArgumentError(f"coords must have shape (N, 2), got {c.shape}")
        if c.shape[0] == 0:
            raise ArgumentError("a SiteSet must be nonempty")
        if not np.all(np.isfinite(c)):
            raise ArgumentError("site coordinates must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __len__(self):
        return self.coords.shape[0]

    def __getitem__(self, i):
        return self.coords[i]

    @property
    def x(self):
        return self.coords[:, 0]

    @property
    def y(self):
        return self.coords[:, 1]

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            object.__setattr__(self, "_tree", cKDTree(self.coords))
        return self._tree

    def take(self, idx) -> "SiteSet":
        return SiteSet(self.coords[np.asarray(idx)])

    def bounds(self):
        lo = self.coords.min(axis=0)
        hi = self.coords.max(axis=0)
        return (lo[0], hi[0], lo[1], hi[1])


@dataclass(frozen=True, eq=False)
class BivariateObservations:
    """Paired responses ``z1``, ``z2`` observed at ``sites``."""

    sites: SiteSet
    z1: np.ndarray
    z2: np.ndarray

    def __post_init__(self):
        if not isinstance(self.sites, SiteSet):
            object.__setattr__(self, "sites", SiteSet(self.sites))
        n = len(self.sites)
        for name in ("z1", "z2"):
            v = np.array(getattr(self, name), dtype=float, copy=True).reshape(-1)
            if v.shape[0] != n:
                raise ArgumentError(f"{name} has {v.shape[0]} values for {n} sites")
            if not np.all(np.isfinite(v)):
                raise ArgumentError(f"{name} contains non-finite values")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __len__(self):
        return len(self.sites)

    @property
    def Z(self) -> np.ndarray:
        """Responses as an ``(N, 2)`` array."""
        return np.column_stack([self.z1, self.z2])

    @property
    def z_vec(self) -> np.ndarray:
        """Stacked vector: all variable-1 values, then all variable-2 values."""
        return np.concatenate([self.z1, self.z2])

    def take(self, idx) -> "BivariateObservations":
        idx = np.asarray(idx)
        return BivariateObservations(self.sites.take(idx), self.z1[idx], self.z2[idx])

    @classmethod
    def from_arrays(cls, coords, z) -> "BivariateObservations":
        z = np.asarray(z, dtype=float)
        return cls(SiteSet(coords), z[:, 0], z[:, 1])


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    fractions: Sequence[float]

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if not fr:
            raise ConfigurationError("at least one split fraction is required")
        if any(not (0.0 < f < 1.0) and f != 1.0 for f in fr):
            raise ConfigurationError(f"split fractions must lie in (0, 1], got {fr}")
        if sum(fr) > 1.0 + 1e-12:
            raise ConfigurationError(f"split fractions sum to {sum(fr)} > 1")
        object.__setattr__(self, "fractions", fr)


def split_indices(n: int, spec: SplitSpec) -> list[np.ndarray]:
    """Disjoint index sets with ``round(f * n)`` members each, drawn under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    sizes = [int(round(f * n)) for f in spec.fractions]
    if any(s == 0 for s in sizes):
        raise ConfigurationError(f"split of {n} sites by {spec.fractions} yields an empty partition")
    if sum(sizes) > n:
        sizes[-1] = n - sum(sizes[:-1])
    out, start = [], 0
    for s in sizes:
        out.append(np.sort(perm[start:start + s]))
        start += s
    return out


def split(obs: BivariateObservations, spec: SplitSpec) -> list[BivariateObservations]:
    return [obs.take(idx) for idx in split_indices(len(obs), spec)]


def complement(n: int, idx) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[np.asarray(idx)] = False
    return np.flatnonzero(mask)


def knn_many(queries, refs: SiteSet, G: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the ``G`` nearest reference sites for each query.

    Rows are sorted by distance, ties broken by lower index.  The kd-tree only
    proposes candidates; every site within the ``G``-th distance is pulled in
    before the final ordering, so the result equals an exhaustive scan.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    n = len(refs)
    if not (1 <= G <= n):
        raise ArgumentError(f"G must lie in [1, {n}], got {G}")
    dist, _ = refs.tree.query(q, k=G)
    dist = dist.reshape(len(q), G)
    kth = dist[:, -1]
    idx_out = np.empty((len(q), G), dtype=np.int64)
    d_out = np.empty((len(q), G))
    candidates = refs.tree.query_ball_point(q, kth * (1 + 1e-12) + 1e-300)
    for i, cand in enumerate(candidates):
        cand = np.asarray(cand, dtype=np.int64)
        d = np.sqrt(((refs.coords[cand] - q[i]) ** 2).sum(axis=1))
        order = np.lexsort((cand, d))[:G]
        idx_out[i] = cand[order]
        d_out[i] = d[order]
    return idx_out, d_out


def knn(query, refs: SiteSet, G: int) -> list[tuple[int, float]]:
    q = as_site(query)
    idx, d = knn_many(q[None, :], refs, G)
    return [(int(i), float(di)) for i, di in zip(idx[0], d[0])]


def read_csv(path) -> BivariateObservations:
    """Read ``x,y,z1,z2`` rows; rejects missing columns and non-finite values."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header[:4]) != CSV_HEADER:
            raise ConfigurationError(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row[:4]]
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
            if len(vals) != 4 or not all(np.isfinite(vals)):
                raise ConfigurationError(f"{path}:{lineno}: expected four finite values")
            rows.append(vals)
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    a = np.array(rows)
    return BivariateObservations(SiteSet(a[:, :2]), a[:, 2], a[:, 3])


def read_sites(path) -> SiteSet:
    """Read the ``x,y`` columns of a CSV whose header starts with ``x,y``; other columns are ignored."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header[:2]) != ("x", "y"):
            raise ConfigurationError(f"{path}: expected a header starting with x,y")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row[:2]]
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
            if len(vals) != 2 or not all(np.isfinite(vals)):
                raise ConfigurationError(f"{path}:{lineno}: expected two finite coordinates")
            rows.append(vals)
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    return SiteSet(np.array(rows))


def read_table(path) -> tuple[tuple[str, ...], np.ndarray]:
    """Header and float matrix of a numeric CSV."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ConfigurationError(f"{path}: empty file")
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    if not rows or any(len(r) != len(header) for r in rows):
        raise ConfigurationError(f"{path}: rows must match the {len(header)}-column header")
    return tuple(h.strip() for h in header), np.array(rows)


def fmt(v: float) -> str:
    return repr(float(v))


def write_rows(path, header, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [np.asarray(c, dtype=float).reshape(-1) for c in columns]
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_csv(path, obs: BivariateObservations):
    write_rows(path, CSV_HEADER, [obs.sites.x, obs.sites.y, obs.z1, obs.z2])


def unit_grid(nx: int, ny: int, bounds=(0.0, 1.0, 0.0, 1.0)) -> SiteSet:
    """Regular ``nx * ny`` grid, x varying fastest, edges included."""
    xs = np.linspace(bounds[0], bounds[1], nx)
    ys = np.linspace(bounds[2], bounds[3], ny)
    gx, gy = np.meshgrid(xs, ys)
    return SiteSet(np.column_stack([gx.ravel(), gy.ravel()]))
