"""Triangulation of polygonal regions and the areal neighbor structure.

A region (outer ring plus optional holes) is scattered with a jittered
grid of points, Delaunay-triangulated, and clipped to the triangles whose
centroid falls inside the region. Triangles sharing at least one vertex
are neighbors; the neighbor graph yields the intrinsic CAR precision
matrix Q with degrees on the diagonal and -1 for each neighbor pair.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay
from scipy import sparse

__all__ = [
    "InvalidRegionError",
    "Region",
    "TriMesh",
    "NeighborGraph",
    "load_region",
    "build_mesh",
    "locate_point",
    "locate_points",
    "build_neighbor_graph",
    "precision_matrix",
    "mesh_to_geojson",
]


class InvalidRegionError(ValueError):
    """Raised for degenerate or malformed region polygons."""


def _ring_area(ring):
    x = ring[:, 0]
    y = ring[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _cross2(u, v):
    """Scalar cross product of 2-vectors, broadcasting over leading axes."""
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _segments_cross(p1, p2, p3, p4):
    """True when open segments p1-p2 and p3-p4 properly intersect."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != d2 and d3 != d4


def _validate_ring(ring, label):
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise InvalidRegionError(f"{label}: expected an (m, 2) vertex array")
    if len(np.unique(ring, axis=0)) < 3:
        raise InvalidRegionError(f"{label}: fewer than 3 distinct vertices")
    if abs(_ring_area(ring)) <= 0.0:
        raise InvalidRegionError(f"{label}: zero area")
    m = len(ring)
    for i in range(m):
        a, b = ring[i], ring[(i + 1) % m]
        for j in range(i + 1, m):
            if j == i or (j + 1) % m == i or (i + 1) % m == j:
                continue
            c, d = ring[j], ring[(j + 1) % m]
            if _segments_cross(a, b, c, d):
                raise InvalidRegionError(f"{label}: ring self-intersects")


def _ring_crossings(ring, lon, lat):
    """Number of times a rightward ray from each point crosses the ring."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    inside = np.zeros(lon.shape, dtype=bool)
    m = len(ring)
    for i in range(m):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % m]
        straddles = (y1 > lat) != (y2 > lat)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = (x2 - x1) * (lat - y1) / (y2 - y1) + x1
        inside ^= straddles & (lon < xcross)
    return inside


@dataclass(frozen=True)
class Region:
    """Polygonal region: one outer ring and zero or more hole rings.

    Rings are (m, 2) float arrays of (lon, lat) vertices; closure is
    implicit (the last vertex connects back to the first).
    """

    rings: tuple

    def __post_init__(self):
        if not self.rings:
            raise InvalidRegionError("region needs at least one ring")
        rings = tuple(np.asarray(r, dtype=float) for r in self.rings)
        object.__setattr__(self, "rings", rings)
        for i, ring in enumerate(rings):
            label = "outer ring" if i == 0 else f"hole {i}"
            _validate_ring(ring, label)
        if self.area <= 0.0:
            raise InvalidRegionError("holes exhaust the outer ring area")

    @property
    def area(self):
        total = abs(_ring_area(self.rings[0]))
        for hole in self.rings[1:]:
            total -= abs(_ring_area(hole))
        return total

    @property
    def bounds(self):
        outer = self.rings[0]
        return (
            float(outer[:, 0].min()),
            float(outer[:, 1].min()),
            float(outer[:, 0].max()),
            float(outer[:, 1].max()),
        )

    def contains_points(self, lon, lat):
        """Even-odd containment test; holes flip membership back off."""
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        inside = np.zeros(lon.shape, dtype=bool)
        for ring in self.rings:
            inside ^= _ring_crossings(ring, lon, lat)
        return inside

    def contains(self, lon, lat):
        return bool(self.contains_points(np.asarray([lon]), np.asarray([lat]))[0])


def _rings_from_geojson_coords(coords):
    rings = []
    for ring in coords:
        arr = np.asarray(ring, dtype=float)
        # GeoJSON rings repeat the first vertex at the end; drop it.
        if len(arr) > 1 and np.allclose(arr[0], arr[-1]):
            arr = arr[:-1]
        rings.append(arr)
    return tuple(rings)


def load_region(path):
    """Load a region from GeoJSON (Polygon / Feature / FeatureCollection)
    or from a bare ``{"rings": [[[lon, lat], ...], ...]}`` object."""
    with open(path) as fh:
        obj = json.load(fh)
    if "rings" in obj:
        return Region(tuple(np.asarray(r, dtype=float) for r in obj["rings"]))
    if obj.get("type") == "FeatureCollection":
        if not obj.get("features"):
            raise InvalidRegionError("empty FeatureCollection")
        obj = obj["features"][0]
    if obj.get("type") == "Feature":
        obj = obj.get("geometry") or {}
    if obj.get("type") != "Polygon":
        raise InvalidRegionError("expected a Polygon geometry or a rings object")
    return Region(_rings_from_geojson_coords(obj["coordinates"]))


@dataclass
class TriMesh:
    """Triangulated region.

    ``vertices`` is (V, 2) float; ``triangles`` is (T, 3) int with
    counterclockwise orientation. ``region`` is the source polygon when
    the mesh was built in-process, None when loaded from disk.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region: Region = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be (T, 3)")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle vertex index out of range")
        if np.any(self.signed_areas() <= 0.0):
            raise ValueError("triangles must be counterclockwise with positive area")

    @property
    def n_triangles(self):
        return len(self.triangles)

    def corners(self):
        """Vertex coordinate arrays (a, b, c), each (T, 2)."""
        v = self.vertices
        t = self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def signed_areas(self):
        a, b, c = self.corners()
        return 0.5 * _cross2(b - a, c - a)

    def centroids(self):
        a, b, c = self.corners()
        return (a + b + c) / 3.0

    def to_text(self):
        lines = []
        for x, y in self.vertices:
            lines.append(f"v {float(x)!r} {float(y)!r}")
        for i, j, k in self.triangles:
            lines.append(f"t {i} {j} {k}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        verts = []
        tris = []
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v" and len(parts) == 3:
                verts.append((float(parts[1]), float(parts[2])))
            elif parts[0] == "t" and len(parts) == 4:
                tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
            else:
                raise ValueError(f"mesh text line {ln}: unrecognized record {raw!r}")
        return cls(np.asarray(verts, dtype=float), np.asarray(tris, dtype=np.int64))


def _scatter_grid(region, cells_x, cells_y, seed):
    """Jittered grid over the region bounding box; border points stay put."""
    x0, y0, x1, y1 = region.bounds
    xs = np.linspace(x0, x1, cells_x + 1)
    ys = np.linspace(y0, y1, cells_y + 1)
    xx, yy = np.meshgrid(xs, ys)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    rng = np.random.default_rng(seed)
    jx = 0.2 * (x1 - x0) / cells_x
    jy = 0.2 * (y1 - y0) / cells_y
    jitter = rng.uniform(-1.0, 1.0, size=pts.shape) * np.array([jx, jy])
    interior = (
        (pts[:, 0] > x0) & (pts[:, 0] < x1) & (pts[:, 1] > y0) & (pts[:, 1] < y1)
    )
    pts[interior] += jitter[interior]
    return pts


def _triangulate_clipped(region, cells_x, cells_y, seed):
    pts = _scatter_grid(region, cells_x, cells_y, seed)
    tri = Delaunay(pts)
    simplices = tri.simplices.copy()
    a = pts[simplices[:, 0]]
    b = pts[simplices[:, 1]]
    c = pts[simplices[:, 2]]
    areas = 0.5 * _cross2(b - a, c - a)
    flip = areas < 0
    simplices[flip] = simplices[flip][:, [0, 2, 1]]
    areas = np.abs(areas)
    x0, y0, x1, y1 = region.bounds
    keep = areas > 1e-12 * (x1 - x0) * (y1 - y0)
    simplices = simplices[keep]
    cent = (pts[simplices[:, 0]] + pts[simplices[:, 1]] + pts[simplices[:, 2]]) / 3.0
    inside = region.contains_points(cent[:, 0], cent[:, 1])
    simplices = simplices[inside]
    used = np.unique(simplices)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(pts[used], remap[simplices], region)


def build_mesh(region, target_triangles, seed):
    """Triangulate ``region`` into about ``target_triangles`` triangles.

    The bounding box is covered by a grid sized so that, after clipping to
    the region, roughly the requested number of triangles survives; the
    grid is resized adaptively until the count lands within 20% of the
    target. Interior grid points are jittered by the seeded generator, so
    the same (region, target, seed) triple always yields the same mesh.
    """
    if target_triangles < 1:
        raise ValueError("target_triangles must be at least 1")
    if region.area <= 0.0:
        raise InvalidRegionError("region has zero area")
    x0, y0, x1, y1 = region.bounds
    w, h = x1 - x0, y1 - y0
    frac = min(max(region.area / (w * h), 1e-6), 1.0)
    cells_wanted = target_triangles / (2.0 * frac)
    tol_lo = 0.8 * target_triangles
    tol_hi = 1.2 * target_triangles

    best = None
    best_err = np.inf
    tried = set()
    scale = 1.0
    for _ in range(12):
        cells = cells_wanted * scale
        cy = max(1, round(np.sqrt(cells * h / w)))
        cx = max(1, round(cells / cy))
        if (cx, cy) in tried:
            scale *= 1.13
            continue
        tried.add((cx, cy))
        mesh = _triangulate_clipped(region, cx, cy, seed)
        count = mesh.n_triangles
        if tol_lo <= count <= tol_hi:
            return mesh
        err = abs(count - target_triangles)
        if err < best_err:
            best, best_err = mesh, err
        if count > 0:
            scale *= min(max(target_triangles / count, 0.5), 2.0)
        else:
            scale *= 2.0
    raise RuntimeError(
        f"could not reach {target_triangles} triangles within 20%; "
        f"closest grid produced {best.n_triangles if best else 0}"
    )


def locate_points(mesh, points, tol=1e-9):
    """Triangle index containing each point, -1 where no triangle does.

    Points on a shared edge or vertex resolve to the lowest containing
    triangle index. Containment is inclusive of edges, with a tolerance
    relative to each triangle's size.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    a, b, c = mesh.corners()
    areas2 = _cross2(b - a, c - a)
    slack = tol * areas2
    out = np.full(len(points), -1, dtype=np.int64)
    chunk = 1024
    for lo in range(0, len(points), chunk):
        p = points[lo : lo + chunk][:, None, :]
        d1 = _cross2(b - a, p - a)
        d2 = _cross2(c - b, p - b)
        d3 = _cross2(a - c, p - c)
        ok = (d1 >= -slack) & (d2 >= -slack) & (d3 >= -slack)
        hit = ok.argmax(axis=1)
        any_hit = ok.any(axis=1)
        out[lo : lo + chunk] = np.where(any_hit, hit, -1)
    return out


def locate_point(mesh, lon, lat):
    """Triangle index containing (lon, lat), or None when outside the mesh."""
    idx = locate_points(mesh, np.array([[lon, lat]]))[0]
    return None if idx < 0 else int(idx)


@dataclass
class NeighborGraph:
    """Symmetric adjacency over triangles (shared-vertex rule)."""

    adjacency: list = field(default_factory=list)

    def __post_init__(self):
        adj = [np.asarray(sorted(set(nb)), dtype=np.int64) for nb in self.adjacency]
        for i, nb in enumerate(adj):
            if np.any(nb == i):
                raise ValueError(f"node {i} lists itself as a neighbor")
            for j in nb:
                if j < 0 or j >= len(adj):
                    raise ValueError(f"node {i} has out-of-range neighbor {j}")
                if i not in adj[j]:
                    raise ValueError(f"adjacency not symmetric at ({i}, {j})")
        self.adjacency = adj

    @property
    def n(self):
        return len(self.adjacency)

    @property
    def degrees(self):
        return np.array([len(nb) for nb in self.adjacency], dtype=np.int64)

    def edges(self):
        """Undirected edge list as an (E, 2) array with i < j."""
        pairs = [(i, int(j)) for i, nb in enumerate(self.adjacency) for j in nb if i < j]
        return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

    def components(self):
        """(count, labels) of connected components, BFS in index order."""
        labels = np.full(self.n, -1, dtype=np.int64)
        count = 0
        for start in range(self.n):
            if labels[start] >= 0:
                continue
            stack = [start]
            labels[start] = count
            while stack:
                i = stack.pop()
                for j in self.adjacency[i]:
                    if labels[j] < 0:
                        labels[j] = count
                        stack.append(int(j))
            count += 1
        return count, labels

    def to_text(self):
        lines = [f"{i}: " + " ".join(str(j) for j in nb) for i, nb in enumerate(self.adjacency)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            head, _, rest = line.partition(":")
            rows[int(head)] = [int(tok) for tok in rest.split()]
        adjacency = [rows.get(i, []) for i in range(max(rows) + 1 if rows else 0)]
        return cls(adjacency)


def build_neighbor_graph(mesh):
    """Neighbor graph where triangles sharing at least one vertex are adjacent."""
    incident = {}
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            incident.setdefault(int(v), []).append(t)
    adjacency = [set() for _ in range(mesh.n_triangles)]
    for tris in incident.values():
        for t in tris:
            adjacency[t].update(tris)
    for t, nb in enumerate(adjacency):
        nb.discard(t)
    return NeighborGraph([sorted(nb) for nb in adjacency])


def precision_matrix(graph):
    """Intrinsic CAR precision: degrees on the diagonal, -1 per neighbor pair.

    Rows sum to zero, so the matrix is singular with rank n - c where c is
    the number of connected components.
    """
    n = graph.n
    rows, cols, vals = [], [], []
    deg = graph.degrees
    for i in range(n):
        rows.append(i)
        cols.append(i)
        vals.append(float(deg[i]))
        for j in graph.adjacency[i]:
            rows.append(i)
            cols.append(int(j))
            vals.append(-1.0)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def mesh_to_geojson(mesh, properties=None):
    """FeatureCollection of triangle polygons with optional per-triangle
    properties (a dict of name -> sequence aligned with triangle index)."""
    properties = properties or {}
    feats = []
    for t, tri in enumerate(mesh.triangles):
        ring = [[float(x), float(y)] for x, y in mesh.vertices[tri]]
        ring.append(ring[0])
        props = {"tri_id": t}
        for name, values in properties.items():
            val = values[t]
            if isinstance(val, np.generic):
                val = val.item()
            props[name] = val
        feats.append(
            {
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
    return {"type": "FeatureCollection", "features": feats}
