"""Reference-configuration geometry.

Tetrahedral meshes with interior-face adjacency and tagged boundary
regions, plus the discrete phase partition and its boundary.
"""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from .tensor3 import cof, det

__all__ = [
    "FREE",
    "GAMMA0",
    "GAMMA1",
    "TAG_NAMES",
    "BOX_SIDES",
    "MeshError",
    "TetMesh",
    "PhaseField",
    "PhaseBoundary",
    "build_box_mesh",
    "load_mesh",
    "mesh_document",
    "phase_boundary",
    "partition_perimeter",
]

FREE, GAMMA0, GAMMA1 = 0, 1, 2
TAG_NAMES = {FREE: "free", GAMMA0: "gamma0", GAMMA1: "gamma1"}
TAG_CODES = {name: code for code, name in TAG_NAMES.items()}

BOX_SIDES = ("x-", "x+", "y-", "y+", "z-", "z+")

# Local faces of a tet, one opposite each vertex.
_TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))

_CLOSURE_TOL = 1e-12


class MeshError(ValueError):
    """Malformed mesh or mesh document."""


class TetMesh:
    """Immutable tetrahedral mesh with precomputed face adjacency.

    Attributes
    ----------
    nodes : (n, 3) float
        Reference coordinates.
    tets : (m, 4) int
        Node indices, positively oriented (positive reference volume).
    volumes : (m,) float
        Reference volumes.
    dinv : (m, 3, 3) float
        Inverses of the reference edge matrices.  The gradient of a nodal
        field u on element e is (u-edge matrix) @ dinv[e].
    iface_nodes, iface_tets, iface_normal, iface_area
        Interior faces.  iface_tets[:, 0] is the lower-index (minus)
        element, iface_tets[:, 1] the higher-index (plus) element, and the
        unit normal points from minus to plus.  The stored node triple is
        oriented so that its cross product agrees with the normal.
    bface_nodes, bface_tet, bface_normal, bface_area, bface_tag
        Boundary faces with outward unit normals and region tags
        (FREE / GAMMA0 / GAMMA1).
    tet_iface_index, tet_iface_neighbor : (m, 4) int
        Interior faces of each element and the element on the other side,
        padded with -1.
    """

    def __init__(self, nodes, tets, boundary_tags=None):
        nodes = np.ascontiguousarray(np.asarray(nodes, dtype=float))
        tets = np.ascontiguousarray(np.asarray(tets, dtype=np.int64))
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshError("nodes must be an (n, 3) array")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshError("tets must be an (m, 4) array")
        if not np.all(np.isfinite(nodes)):
            raise MeshError("node coordinates must be finite")
        if tets.size and (tets.min() < 0 or tets.max() >= len(nodes)):
            raise MeshError("tet node index out of range")
        for e, tet in enumerate(tets):
            if len(set(int(i) for i in tet)) != 4:
                raise MeshError(f"element {e} has repeated nodes")

        self.nodes = nodes
        self.tets = tets

        edges = (nodes[tets[:, 1:]] - nodes[tets[:, :1]]).transpose(0, 2, 1)
        dets = det(edges)
        if np.any(dets <= 0.0):
            bad = int(np.argmax(dets <= 0.0))
            raise MeshError(f"element {bad} has non-positive reference volume")
        self.volumes = dets / 6.0
        self.dinv = cof(edges).transpose(0, 2, 1) / dets[:, None, None]

        self._build_faces(boundary_tags)
        self._validate_closure()
        for arr in (
            self.nodes, self.tets, self.volumes, self.dinv,
            self.iface_nodes, self.iface_tets, self.iface_normal, self.iface_area,
            self.bface_nodes, self.bface_tet, self.bface_normal, self.bface_area,
            self.bface_tag, self.tet_iface_index, self.tet_iface_neighbor,
        ):
            arr.setflags(write=False)

    # ------------------------------------------------------------------

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def num_tets(self):
        return len(self.tets)

    @property
    def boundary_node_mask(self):
        mask = np.zeros(self.num_nodes, dtype=bool)
        mask[self.bface_nodes.ravel()] = True
        return mask

    def tet_centroids(self):
        return self.nodes[self.tets].mean(axis=1)

    def total_volume(self):
        return float(self.volumes.sum())

    # ------------------------------------------------------------------

    def _build_faces(self, boundary_tags):
        incidence = {}
        for e, tet in enumerate(self.tets):
            for local in _TET_FACES:
                tri = (int(tet[local[0]]), int(tet[local[1]]), int(tet[local[2]]))
                incidence.setdefault(tuple(sorted(tri)), []).append(e)

        interior, boundary = [], []
        for key, elems in incidence.items():
            if len(elems) == 2:
                interior.append((min(elems), max(elems), key))
            elif len(elems) == 1:
                boundary.append((elems[0], key))
            else:
                raise MeshError(
                    f"face {key} shared by {len(elems)} elements (non-manifold)"
                )
        interior.sort()
        boundary.sort()

        centroids = self.tet_centroids()

        def face_geometry(key):
            a, b, c = (self.nodes[i] for i in key)
            raw = np.cross(b - a, c - a)
            area = 0.5 * np.linalg.norm(raw)
            if area <= 0.0:
                raise MeshError(f"degenerate face {key}")
            return raw / np.linalg.norm(raw), area

        if_nodes, if_tets, if_normal, if_area = [], [], [], []
        for lo, hi, key in interior:
            normal, area = face_geometry(key)
            tri = list(key)
            if np.dot(normal, centroids[hi] - centroids[lo]) < 0.0:
                normal = -normal
                tri[1], tri[2] = tri[2], tri[1]
            if_nodes.append(tri)
            if_tets.append((lo, hi))
            if_normal.append(normal)
            if_area.append(area)

        bf_nodes, bf_tet, bf_normal, bf_area = [], [], [], []
        for e, key in boundary:
            normal, area = face_geometry(key)
            tri = list(key)
            fc = self.nodes[list(key)].mean(axis=0)
            if np.dot(normal, fc - centroids[e]) < 0.0:
                normal = -normal
                tri[1], tri[2] = tri[2], tri[1]
            bf_nodes.append(tri)
            bf_tet.append(e)
            bf_normal.append(normal)
            bf_area.append(area)

        self.iface_nodes = np.asarray(if_nodes, dtype=np.int64).reshape(-1, 3)
        self.iface_tets = np.asarray(if_tets, dtype=np.int64).reshape(-1, 2)
        self.iface_normal = np.asarray(if_normal, dtype=float).reshape(-1, 3)
        self.iface_area = np.asarray(if_area, dtype=float)
        self.bface_nodes = np.asarray(bf_nodes, dtype=np.int64).reshape(-1, 3)
        self.bface_tet = np.asarray(bf_tet, dtype=np.int64)
        self.bface_normal = np.asarray(bf_normal, dtype=float).reshape(-1, 3)
        self.bface_area = np.asarray(bf_area, dtype=float)

        self.bface_tag = self._assign_tags(boundary_tags)

        index = np.full((self.num_tets, 4), -1, dtype=np.int64)
        neighbor = np.full((self.num_tets, 4), -1, dtype=np.int64)
        counts = np.zeros(self.num_tets, dtype=np.int64)
        for f, (lo, hi) in enumerate(self.iface_tets):
            for own, other in ((lo, hi), (hi, lo)):
                index[own, counts[own]] = f
                neighbor[own, counts[own]] = other
                counts[own] += 1
        self.tet_iface_index = index
        self.tet_iface_neighbor = neighbor

    def _assign_tags(self, boundary_tags):
        nfaces = len(self.bface_tet)
        tags = np.full(nfaces, FREE, dtype=np.int64)
        if boundary_tags is None:
            return tags
        if callable(boundary_tags):
            for f in range(nfaces):
                fc = self.nodes[self.bface_nodes[f]].mean(axis=0)
                name = boundary_tags(fc, self.bface_normal[f])
                if name not in TAG_CODES:
                    raise MeshError(f"unknown boundary tag {name!r}")
                tags[f] = TAG_CODES[name]
            return tags
        pending = {tuple(sorted(int(i) for i in key)): name
                   for key, name in boundary_tags.items()}
        for f in range(nfaces):
            key = tuple(sorted(int(i) for i in self.bface_nodes[f]))
            name = pending.pop(key, "free")
            if name not in TAG_CODES:
                raise MeshError(f"unknown boundary tag {name!r} on face {key}")
            tags[f] = TAG_CODES[name]
        if pending:
            key = next(iter(pending))
            raise MeshError(f"tagged face {key} is not a boundary face")
        return tags

    def _validate_closure(self):
        # Outward normal times area summed over the four faces of each tet
        # must vanish: the closed-polyhedron identity behind the discrete
        # divergence-theorem checks.
        for e, tet in enumerate(self.tets):
            total = np.zeros(3)
            scale = 0.0
            for local in _TET_FACES:
                a, b, c = (self.nodes[tet[i]] for i in local)
                opp = self.nodes[tet[({0, 1, 2, 3} - set(local)).pop()]]
                v = 0.5 * np.cross(b - a, c - a)
                if np.dot(v, opp - a) > 0.0:
                    v = -v
                total += v
                scale += np.linalg.norm(v)
            if np.linalg.norm(total) > _CLOSURE_TOL * max(scale, 1.0):
                raise MeshError(f"element {e} violates the closed-surface identity")


# ----------------------------------------------------------------------
# Construction helpers


_PERMS = tuple(itertools.permutations((0, 1, 2)))


def _parity(perm):
    inv = sum(1 for a in range(3) for b in range(a + 1, 3) if perm[a] > perm[b])
    return inv % 2


def build_box_mesh(nx, ny, nz, lx=1.0, ly=1.0, lz=1.0, gamma0=(), gamma1=()):
    """Structured box mesh, each grid cell split into the fixed 6-tet
    Kuhn pattern.

    Nodes are ordered x-fastest: id(i, j, k) = i + (nx+1)(j + (ny+1) k).
    Each cell emits its tets in lexicographic axis-permutation order, with
    an orientation-restoring swap of the last two vertices for odd
    permutations.  gamma0 / gamma1 list box sides ("x-", "x+", ...) that
    receive the corresponding boundary tag; the rest stays free.
    """
    for name, v in (("nx", nx), ("ny", ny), ("nz", nz)):
        if int(v) != v or v < 1:
            raise MeshError(f"{name} must be a positive integer")
    if min(lx, ly, lz) <= 0.0:
        raise MeshError("box lengths must be positive")
    for side in tuple(gamma0) + tuple(gamma1):
        if side not in BOX_SIDES:
            raise MeshError(f"unknown box side {side!r}")
    if set(gamma0) & set(gamma1):
        raise MeshError("gamma0 and gamma1 sides overlap")

    nx, ny, nz = int(nx), int(ny), int(nz)
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    kk, jj, ii = np.meshgrid(
        np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1), indexing="ij"
    )
    nodes = np.column_stack([xs[ii.ravel()], ys[jj.ravel()], zs[kk.ravel()]])

    def node_id(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    tets = []
    for cz in range(nz):
        for cy in range(ny):
            for cx in range(nx):
                base = np.array([cx, cy, cz])
                for perm in _PERMS:
                    corners = [base.copy()]
                    for axis in perm:
                        nxt = corners[-1].copy()
                        nxt[axis] += 1
                        corners.append(nxt)
                    ids = [node_id(*c) for c in corners]
                    if _parity(perm):
                        ids[2], ids[3] = ids[3], ids[2]
                    tets.append(ids)

    lengths = (lx, ly, lz)
    g0, g1 = set(gamma0), set(gamma1)

    def classify(centroid, normal):
        axis = int(np.argmax(np.abs(normal)))
        positive = normal[axis] > 0.0
        side = "xyz"[axis] + ("+" if positive else "-")
        # sanity: box boundary faces are axis aligned
        target = lengths[axis] if positive else 0.0
        if abs(centroid[axis] - target) > 1e-9 * max(lengths):
            raise MeshError("box face classification failed")
        if side in g0:
            return "gamma0"
        if side in g1:
            return "gamma1"
        return "free"

    return TetMesh(nodes, np.asarray(tets, dtype=np.int64), boundary_tags=classify)


def mesh_document(mesh):
    """JSON-ready document for a mesh; inverse of load_mesh."""
    tags = []
    for f in range(len(mesh.bface_tet)):
        code = int(mesh.bface_tag[f])
        if code != FREE:
            key = sorted(int(i) for i in mesh.bface_nodes[f])
            tags.append({"face": key, "tag": TAG_NAMES[code]})
    return {
        "nodes": [[float(x) for x in p] for p in mesh.nodes],
        "tets": [[int(i) for i in t] for t in mesh.tets],
        "boundary_tags": tags,
    }


def load_mesh(document):
    """Build a validated TetMesh from a parsed JSON document."""
    if not isinstance(document, dict):
        raise MeshError("mesh document must be an object")
    for key in ("nodes", "tets"):
        if key not in document:
            raise MeshError(f"mesh document missing {key!r}")
    nodes = document["nodes"]
    tets = document["tets"]
    if not isinstance(nodes, list) or any(len(p) != 3 for p in nodes):
        raise MeshError("nodes must be a list of [x, y, z] triples")
    if not isinstance(tets, list) or any(len(t) != 4 for t in tets):
        raise MeshError("tets must be a list of 4 node indices")
    tag_map = {}
    for item in document.get("boundary_tags", []):
        if not isinstance(item, dict) or "face" not in item or "tag" not in item:
            raise MeshError("boundary_tags entries need 'face' and 'tag'")
        face = item["face"]
        if len(face) != 3:
            raise MeshError(f"boundary tag face {face} must have 3 nodes")
        tag = item["tag"]
        if tag not in TAG_CODES:
            raise MeshError(f"unknown boundary tag {tag!r}")
        tag_map[tuple(sorted(int(i) for i in face))] = tag
    return TetMesh(nodes, tets, boundary_tags=tag_map)


# ----------------------------------------------------------------------
# Phase partition


@dataclasses.dataclass
class PhaseField:
    """Per-element phase label; 0 is austenite, 1..M the martensite variants."""

    labels: np.ndarray
    num_phases: int

    def __post_init__(self):
        self.labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if self.labels.ndim != 1:
            raise ValueError("labels must be a flat integer array")
        if self.num_phases < 2:
            raise ValueError("need at least one martensite variant (two phases)")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.num_phases
        ):
            raise ValueError("phase label out of range")

    def copy(self):
        return PhaseField(self.labels.copy(), self.num_phases)

    @classmethod
    def uniform(cls, mesh, label, num_phases):
        return cls(np.full(mesh.num_tets, label, dtype=np.int64), num_phases)


@dataclasses.dataclass
class PhaseBoundary:
    """Interior faces whose two elements carry distinct labels.

    label_plus / label_minus are the labels on the plus / minus side of
    the stored face orientation.
    """

    face_ids: np.ndarray
    label_plus: np.ndarray
    label_minus: np.ndarray

    @property
    def size(self):
        return len(self.face_ids)


def _check_field(mesh, z):
    if len(z.labels) != mesh.num_tets:
        raise ValueError("phase field size does not match the mesh")


def phase_boundary(mesh, z):
    """Faces of the discrete phase boundary (interior faces only)."""
    _check_field(mesh, z)
    lab = z.labels
    minus = lab[mesh.iface_tets[:, 0]]
    plus = lab[mesh.iface_tets[:, 1]]
    ids = np.nonzero(minus != plus)[0]
    return PhaseBoundary(ids, plus[ids], minus[ids])


def partition_perimeter(mesh, z):
    """Per-phase total reference area of adjacent phase-boundary faces."""
    _check_field(mesh, z)
    pb = phase_boundary(mesh, z)
    per = np.zeros(z.num_phases)
    if pb.size:
        area = mesh.iface_area[pb.face_ids]
        np.add.at(per, pb.label_plus, area)
        np.add.at(per, pb.label_minus, area)
    return per
