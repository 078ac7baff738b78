"""Particle discretizations, supports and dual-supports."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .multi_index import count_indexes

WEIGHTS = ("const", "invvol", "gauss")


@dataclass
class PointCloud:
    """Particles with nodal-integration volumes and boundary labels.

    Parameters
    ----------
    positions : ndarray, shape (N, d)
    volumes : ndarray, shape (N,)
    boundary_tags : list of frozenset of str, length N
    """

    positions: np.ndarray
    volumes: np.ndarray
    boundary_tags: list = field(default=None)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.ndim != 2 or self.positions.shape[0] < 1:
            raise ValueError("positions must have shape (N, d) with N >= 1")
        self.volumes = np.asarray(self.volumes, dtype=float).reshape(-1)
        if self.volumes.shape[0] != self.positions.shape[0]:
            raise ValueError("one volume per point required")
        if np.any(self.volumes <= 0):
            raise ValueError("volumes must be positive")
        if self.boundary_tags is None:
            self.boundary_tags = [frozenset() for _ in range(len(self))]
        else:
            self.boundary_tags = [frozenset(t) for t in self.boundary_tags]
            if len(self.boundary_tags) != len(self):
                raise ValueError("one tag set per point required")

    def __len__(self):
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def tagged(self, *tags) -> np.ndarray:
        """Indexes of points carrying any of ``tags`` (all boundary points if none given)."""
        if not tags:
            return np.array([i for i, t in enumerate(self.boundary_tags) if t], dtype=int)
        want = set(tags)
        return np.array([i for i, t in enumerate(self.boundary_tags) if t & want], dtype=int)

    @property
    def tag_names(self) -> set:
        return set().union(*self.boundary_tags) if len(self) else set()


def _axis_names(d):
    return "xyz"[:d] if d <= 3 else [f"x{k + 1}" for k in range(d)]


VOLUME_RULES = ("tributary", "cell")


def build_grid(lower, upper, counts, perturbation=0.0, seed=None,
               volume_rule="tributary") -> PointCloud:
    """Regular lattice over the box ``[lower, upper]``.

    With ``volume_rule="tributary"`` boundary nodes get the share of the
    cell that lies inside the box, so the volumes sum to the box measure;
    ``"cell"`` gives every node the full cell ``prod(dx)``.  With
    ``perturbation > 0`` interior nodes are shifted by uniform offsets of at
    most ``perturbation * dx / 2`` per axis; volumes are left at their
    lattice values.  Faces are tagged ``"<axis>min"`` / ``"<axis>max"``.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.size
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (d,))
    if upper.size != d:
        raise ValueError("lower and upper must have the same dimension")
    if np.any(upper <= lower):
        raise ValueError("degenerate box")
    if np.any(counts < 2):
        raise ValueError("need at least 2 nodes per axis")
    if not 0.0 <= perturbation < 1.0:
        raise ValueError("perturbation must lie in [0, 1)")
    if volume_rule not in VOLUME_RULES:
        raise ValueError(f"volume_rule must be one of {VOLUME_RULES}")

    axes, weights = [], []
    for k in range(d):
        x = np.linspace(lower[k], upper[k], counts[k])
        dx = (upper[k] - lower[k]) / (counts[k] - 1)
        wt = np.full(counts[k], dx)
        if volume_rule == "tributary":
            wt[[0, -1]] = dx / 2
        axes.append(x)
        weights.append(wt)
    # first axis varies slowest
    grids = np.meshgrid(*axes, indexing="ij")
    pos = np.stack([g.ravel() for g in grids], axis=1)
    vol = np.ones(pos.shape[0])
    for wg in np.meshgrid(*weights, indexing="ij"):
        vol *= wg.ravel()

    names = _axis_names(d)
    idx = np.stack([g.ravel() for g in np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")], axis=1)
    tags = []
    for row in idx:
        t = set()
        for k in range(d):
            if row[k] == 0:
                t.add(f"{names[k]}min")
            elif row[k] == counts[k] - 1:
                t.add(f"{names[k]}max")
        tags.append(frozenset(t))

    if perturbation > 0:
        rng = np.random.default_rng(seed)
        dx = (upper - lower) / (counts - 1)
        shift = rng.uniform(-1.0, 1.0, size=pos.shape) * perturbation * dx / 2
        interior = np.array([not t for t in tags])
        pos[interior] += shift[interior]
    return PointCloud(pos, vol, tags)


@dataclass(frozen=True)
class SupportTable:
    """Neighbor lists of every particle.

    ``neighbors`` is an ``(N, k)`` integer array (self excluded, sorted by
    distance with ties broken by index); ``dual_neighbors[j]`` lists the
    points whose supports contain ``j``.  ``h`` holds the characteristic
    length of each support and ``weights`` the ``(N, k)`` weight values.
    """

    neighbors: np.ndarray
    dual_neighbors: tuple
    h: np.ndarray
    weights: np.ndarray
    weight: str = "const"
    gauss_shape: float = 2.0

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


def default_neighbor_count(d: int, p: int) -> int:
    """``5 p + n_p`` neighbors for an order-``p`` operator."""
    return 5 * p + count_indexes(d, p)


def knn(positions, k) -> np.ndarray:
    """``k`` nearest neighbors of each point, self excluded, ties broken by index."""
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    if k >= n:
        raise ValueError(f"k={k} neighbors requested but only {n} points")
    tree = cKDTree(positions)
    # over-query so that every candidate tied with the k-th distance is seen
    extra = min(n, k + 1 + 4 * (positions.shape[1] + 1) * 2)
    while True:
        dist, idx = tree.query(positions, k=extra)
        dist = dist.reshape(n, extra)
        idx = idx.reshape(n, extra)
        kth = dist[:, k]  # k+1-th entry including self
        if extra == n or np.all(dist[:, -1] > kth * (1 + 1e-12) + 1e-300):
            break
        extra = min(n, 2 * extra)
    out = np.empty((n, k), dtype=np.intp)
    for i in range(n):
        di, ii = dist[i], idx[i]
        keep = ii != i
        di, ii = di[keep], ii[keep]
        # snap distances within round-off so that lattice ties compare equal
        key = np.round(di / (di.max() + 1e-300), 12)
        order = np.lexsort((ii, key))
        out[i] = ii[order[:k]]
    return out


def dual_supports(neighbors) -> tuple:
    """Invert the support table: ``dual[j] = {i : j in neighbors[i]}`` (sorted)."""
    neighbors = np.asarray(neighbors)
    n, k = neighbors.shape
    owners = np.repeat(np.arange(n), k)
    members = neighbors.ravel()
    order = np.lexsort((owners, members))
    members, owners = members[order], owners[order]
    splits = np.searchsorted(members, np.arange(n + 1))
    return tuple(owners[splits[j]:splits[j + 1]] for j in range(n))


def weight_values(kind, r, h, volumes_j, gauss_shape=2.0) -> np.ndarray:
    """Weight ``w(r)`` for offsets ``r`` of shape ``(N, k, d)``.

    ``"const"``: 1; ``"invvol"``: ``1 / dV_j``; ``"gauss"``:
    ``exp(-(gauss_shape |r| / h_i)^2)``.
    """
    if kind == "const":
        return np.ones(r.shape[:-1])
    if kind == "invvol":
        return 1.0 / volumes_j
    if kind == "gauss":
        rr = np.linalg.norm(r, axis=-1) / h[:, None]
        return np.exp(-((gauss_shape * rr) ** 2))
    raise ValueError(f"unknown weight {kind!r}; choose from {WEIGHTS}")


def build_supports(cloud: PointCloud, k: int, weight: str = "const",
                   gauss_shape: float = 2.0) -> SupportTable:
    """k-nearest-neighbor supports, dual-supports, lengths and weights.

    ``h_i`` is the largest neighbor distance in the support of ``i``.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if k >= len(cloud):
        raise ValueError(f"k={k} must be smaller than the number of points ({len(cloud)})")
    nbr = knn(cloud.positions, k)
    r = cloud.positions[nbr] - cloud.positions[:, None, :]
    h = np.linalg.norm(r, axis=-1).max(axis=1)
    if np.any(h <= 0):
        raise ValueError("coincident points: zero support length")
    w = weight_values(weight, r, h, cloud.volumes[nbr], gauss_shape)
    return SupportTable(nbr, dual_supports(nbr), h, w, weight, gauss_shape)


def write_cloud(path, cloud: PointCloud):
    """Write ``x1 ... xd volume tag1,tag2`` lines."""
    lines = [f"# honom point cloud, dim={cloud.dim}, n={len(cloud)}"]
    for x, v, t in zip(cloud.positions, cloud.volumes, cloud.boundary_tags):
        coords = " ".join(repr(float(c)) for c in x)
        tags = ",".join(sorted(t)) if t else "-"
        lines.append(f"{coords} {float(v)!r} {tags}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud(path) -> PointCloud:
    """Read a cloud written by :func:`write_cloud` (``-`` or nothing means no tags)."""
    pos, vol, tags = [], [], []
    dim = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            float(parts[-1])
            numeric, tag = parts, ""
        except ValueError:
            numeric, tag = parts[:-1], parts[-1]
        if len(numeric) < 2:
            raise ValueError(f"{path}:{lineno}: expected coordinates and a volume")
        if dim is None:
            dim = len(numeric) - 1
        elif len(numeric) - 1 != dim:
            raise ValueError(f"{path}:{lineno}: inconsistent dimension")
        vals = [float(v) for v in numeric]
        pos.append(vals[:-1])
        vol.append(vals[-1])
        tags.append(frozenset() if tag in ("", "-") else frozenset(tag.split(",")))
    if not pos:
        raise ValueError(f"{path}: no points")
    return PointCloud(np.array(pos), np.array(vol), tags)
