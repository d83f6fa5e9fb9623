"""Triangle meshes: container, OBJ import/export and test-shape generators."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ObjFormatError(ValueError):
    pass


@dataclass
class TriMesh:
    """Vertices plus triangles (or, for polylines, explicit edges).

    ``rest_vertices`` is the reference configuration used by deformation
    energies; it defaults to ``None`` for meshes without one.
    """

    vertices: np.ndarray
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    lines: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    rest_vertices: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.lines = np.asarray(self.lines, dtype=np.int64).reshape(-1, 2)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise ValueError(f"vertices must be (m, 2) or (m, 3), got {self.vertices.shape}")
        m = len(self.vertices)
        for name, idx in (("triangle", self.triangles), ("edge", self.lines)):
            if idx.size and (idx.min() < 0 or idx.max() >= m):
                raise ValueError(f"{name} index out of range [0, {m})")
        t = self.triangles
        if len(t) and np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ValueError("triangle with repeated vertex")
        if self.rest_vertices is not None:
            self.rest_vertices = np.ascontiguousarray(self.rest_vertices, dtype=np.float64)
            if self.rest_vertices.shape != self.vertices.shape:
                raise ValueError("rest_vertices must match vertices in shape")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def edges(self) -> np.ndarray:
        """Unique undirected edges ``(i, j)`` with ``i < j``, sorted."""
        t = self.triangles
        pairs = [self.lines]
        if len(t):
            pairs.append(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]))
        e = np.sort(np.concatenate(pairs), axis=1)
        if not len(e):
            return e.reshape(0, 2)
        return np.unique(e, axis=0)

    def neighbors(self) -> list[list[int]]:
        nbrs = [set() for _ in range(self.n_vertices)]
        for i, j in self.edges():
            nbrs[i].add(int(j))
            nbrs[j].add(int(i))
        return [sorted(s) for s in nbrs]

    def rest(self) -> np.ndarray:
        return self.vertices if self.rest_vertices is None else self.rest_vertices


def load_obj(path, flatten_2d: bool = False) -> TriMesh:
    """Read ``v``/``f`` (and polyline ``l``) records from an ASCII OBJ file.

    Face entries may use ``v/vt/vn`` syntax; only the vertex index is kept.
    Other record types are skipped. With ``flatten_2d`` a mesh whose z
    coordinates are all below 1e-9 in magnitude is returned with n=2.
    """
    verts, tris, lines = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            toks = line.split()
            if not toks or toks[0].startswith("#"):
                continue
            if toks[0] == "v":
                try:
                    verts.append([float(x) for x in toks[1:4]])
                except ValueError as exc:
                    raise ObjFormatError(f"line {lineno}: bad vertex record") from exc
                if len(verts[-1]) != 3:
                    raise ObjFormatError(f"line {lineno}: vertex needs 3 coordinates")
            elif toks[0] in ("f", "l"):
                want = 3 if toks[0] == "f" else 2
                if len(toks) - 1 != want:
                    kind = "non-triangle face" if want == 3 else "polyline with more than 2 points"
                    raise ObjFormatError(f"line {lineno}: {kind} ({len(toks) - 1} vertices)")
                try:
                    idx = [int(tok.split("/")[0]) - 1 for tok in toks[1:]]
                except ValueError as exc:
                    raise ObjFormatError(f"line {lineno}: bad index") from exc
                (tris if want == 3 else lines).append((lineno, idx))
    m = len(verts)
    for lineno, idx in tris + lines:
        if min(idx) < 0 or max(idx) >= m:
            raise ObjFormatError(f"line {lineno}: vertex index out of range (have {m} vertices)")
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    if flatten_2d and m and np.all(np.abs(v[:, 2]) < 1e-9):
        v = v[:, :2]
    return TriMesh(v, [i for _, i in tris], [i for _, i in lines])


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_obj(mesh: TriMesh, path, vertices: np.ndarray | None = None) -> None:
    """Write ``mesh`` as OBJ; 2-D meshes get z = 0. ``vertices`` overrides positions."""
    v = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
    if v.shape[1] == 2:
        v = np.column_stack([v, np.zeros(len(v))])
    out = [f"v {x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in v]
    out += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.triangles]
    out += [f"l {a + 1} {b + 1}\n" for a, b in mesh.lines]
    _atomic_write_text(path, "".join(out))


def make_circle(k: int) -> TriMesh:
    """Unit-radius regular k-gon with cycle edges."""
    if k < 3:
        raise ValueError(f"circle needs k >= 3 vertices, got {k}")
    theta = 2.0 * np.pi * np.arange(k) / k
    v = np.column_stack([np.cos(theta), np.sin(theta)])
    idx = np.arange(k)
    return TriMesh(v, lines=np.column_stack([idx, (idx + 1) % k]))


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def make_icosphere(subdivisions: int) -> TriMesh:
    """Loop-style 1-to-4 subdivision of the icosahedron, projected to the unit sphere."""
    if not 0 <= subdivisions <= 5:
        raise ValueError(f"subdivisions must be in [0, 5], got {subdivisions}")
    v, faces = _icosahedron()
    verts = list(v)
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                mid = verts[a] + verts[b]
                verts.append(mid / np.linalg.norm(mid))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts)
    # re-project exactly so every norm is 1 to machine precision
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return TriMesh(v, np.array(faces))


def ring_size(k: int) -> int:
    """Vertex count of ring ``k`` (k >= 1) in :func:`make_disk`."""
    return 7 * k - 1


def make_disk(rings: int) -> TriMesh:
    """Triangulated unit disk: a centre vertex plus concentric rings.

    Ring ``k`` sits at radius ``k / rings`` and holds ``7k - 1`` vertices
    (6 on the first ring), which keeps edges roughly equal in length.
    ``rings=7`` gives 190 vertices. Rings are stitched by an angular sweep;
    all triangles are counter-clockwise.
    """
    if rings < 1:
        raise ValueError(f"disk needs rings >= 1, got {rings}")
    pts = [np.zeros(2)]
    ring_idx, ring_ang = [[0]], [None]
    for k in range(1, rings + 1):
        n = ring_size(k)
        offset = 0.5 * (k % 2) * 2.0 * np.pi / n
        ang = offset + 2.0 * np.pi * np.arange(n) / n
        r = k / rings
        start = len(pts)
        pts.extend(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
        ring_idx.append(list(range(start, start + n)))
        ring_ang.append(ang)

    tris = []
    outer = ring_idx[1]
    for j in range(len(outer)):
        tris.append((0, outer[j], outer[(j + 1) % len(outer)]))
    for k in range(2, rings + 1):
        tris += _stitch(ring_idx[k - 1], ring_ang[k - 1], ring_idx[k], ring_ang[k])

    v = np.array(pts)
    tris = np.array(tris, dtype=np.int64)
    e1 = v[tris[:, 1]] - v[tris[:, 0]]
    e2 = v[tris[:, 2]] - v[tris[:, 0]]
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    flip = cross < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return TriMesh(v, tris, rest_vertices=v.copy())


def _stitch(inner, inner_ang, outer, outer_ang):
    """Triangulate the annulus between two rings by merging angles."""
    ni, no = len(inner), len(outer)
    # unwrap both rings to start at the smaller of their first angles
    ai = np.concatenate([inner_ang, inner_ang[:1] + 2 * np.pi])
    ao = np.concatenate([outer_ang, outer_ang[:1] + 2 * np.pi])
    i = j = 0
    tris = []
    while i < ni or j < no:
        if j >= no or (i < ni and ai[i + 1] <= ao[j + 1]):
            tris.append((inner[i % ni], outer[j % no], inner[(i + 1) % ni]))
            i += 1
        else:
            tris.append((inner[i % ni], outer[j % no], outer[(j + 1) % no]))
            j += 1
    return tris


def from_generator_id(gen_id: str) -> TriMesh:
    """Build a mesh from ``"circle:k"``, ``"icosphere:s"`` or ``"disk:r"``."""
    name, _, arg = gen_id.partition(":")
    makers = {"circle": make_circle, "icosphere": make_icosphere, "disk": make_disk}
    if name not in makers or not arg:
        raise ValueError(f"unknown mesh generator {gen_id!r}; expected circle:k, icosphere:s or disk:r")
    try:
        value = int(arg)
    except ValueError:
        raise ValueError(f"mesh generator argument must be an integer: {gen_id!r}") from None
    return makers[name](value)


def resolve_mesh(source: str) -> TriMesh:
    """Generator id or path to an OBJ file."""
    name = source.partition(":")[0]
    if name in ("circle", "icosphere", "disk") and not os.path.exists(source):
        return from_generator_id(source)
    return load_obj(source, flatten_2d=True)
