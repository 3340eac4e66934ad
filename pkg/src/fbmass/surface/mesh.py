"""Triangle meshes in R^3 with labelled boundary edges, discrete curvatures and Gauss-Bonnet."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import IoFailure, NonManifoldMesh

FIXED, FREE = "FIXED", "FREE"


@dataclass
class GaussBonnet:
    interior: float       # sum of angle defects, the discrete int K
    geodesic: float       # boundary turning at smooth boundary vertices, the discrete int k_g
    corners: float        # sum over corners of (pi - inner angle)
    inner_angles: list
    chi: int
    defect: float


class TriMesh:
    """Oriented triangle mesh with boundary edges labelled ``FIXED`` or ``FREE``.

    Unlabelled boundary edges default to ``FIXED``.  Corners are the vertices
    where a fixed and a free boundary edge meet.
    """

    def __init__(self, vertices, faces, edge_labels=None, normals=None):
        self.V = np.asarray(vertices, float)
        self.F = np.asarray(faces, int)
        if self.V.ndim != 2 or self.V.shape[1] != 3 or self.F.ndim != 2 or self.F.shape[1] != 3:
            raise NonManifoldMesh("vertices must be (N, 3) and faces (M, 3)")
        self._normals = None if normals is None else np.asarray(normals, float)
        self._check_connectivity()
        labels = {} if edge_labels is None else {tuple(sorted(e)): lab for e, lab in edge_labels.items()}
        for e in labels:
            if e not in self.boundary_edges:
                raise NonManifoldMesh(f"labelled edge {e} is not a boundary edge")
        self.labels = {e: labels.get(e, FIXED) for e in self.boundary_edges}

    # -- connectivity -------------------------------------------------------
    def _check_connectivity(self):
        directed = defaultdict(int)
        undirected = defaultdict(list)
        for f, tri in enumerate(self.F):
            if len(set(tri)) < 3:
                raise NonManifoldMesh("degenerate triangle")
            for k in range(3):
                a, b = tri[k], tri[(k + 1) % 3]
                directed[(a, b)] += 1
                undirected[tuple(sorted((a, b)))].append(f)
        for e, fs in undirected.items():
            if len(fs) > 2:
                raise NonManifoldMesh(f"edge {e} has {len(fs)} faces")
        if any(c > 1 for c in directed.values()):
            raise NonManifoldMesh("faces are not consistently oriented")
        self.edges = sorted(undirected)
        self.edge_faces = dict(undirected)
        self.boundary_edges = [e for e in self.edges if len(undirected[e]) == 1]
        # boundary vertices must have exactly two boundary edges
        count = defaultdict(int)
        for a, b in self.boundary_edges:
            count[a] += 1
            count[b] += 1
        if any(c != 2 for c in count.values()):
            raise NonManifoldMesh("boundary is not a disjoint union of closed curves")

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.array(sorted({v for e in self.boundary_edges for v in e}), int)

    @cached_property
    def corners(self) -> np.ndarray:
        kinds = defaultdict(set)
        for e, lab in self.labels.items():
            for v in e:
                kinds[v].add(lab)
        return np.array(sorted(v for v, k in kinds.items() if len(k) == 2), int)

    def euler_characteristic(self) -> int:
        return len(self.V) - len(self.edges) + len(self.F)

    # -- metric quantities ---------------------------------------------------
    def _edges_of_faces(self, V=None):
        V = self.V if V is None else V
        p0, p1, p2 = V[self.F[:, 0]], V[self.F[:, 1]], V[self.F[:, 2]]
        return p0, p1, p2

    def face_normals(self, unit: bool = True):
        p0, p1, p2 = self._edges_of_faces()
        n = np.cross(p1 - p0, p2 - p0)
        return n / np.linalg.norm(n, axis=1, keepdims=True) if unit else n

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def angles(self) -> np.ndarray:
        """Interior angles ``(M, 3)``, column ``k`` at vertex ``F[:, k]``."""
        out = np.empty(self.F.shape)
        for k in range(3):
            a = self.V[self.F[:, k]]
            b = self.V[self.F[:, (k + 1) % 3]]
            c = self.V[self.F[:, (k + 2) % 3]]
            u, v = b - a, c - a
            cross = np.linalg.norm(np.cross(u, v), axis=1)
            out[:, k] = np.arctan2(cross, np.einsum("ij,ij->i", u, v))
        return out

    def angle_sums(self) -> np.ndarray:
        s = np.zeros(len(self.V))
        np.add.at(s, self.F.ravel(), self.angles().ravel())
        return s

    def vertex_areas(self) -> np.ndarray:
        """Barycentric dual areas."""
        a = np.zeros(len(self.V))
        np.add.at(a, self.F.ravel(), np.repeat(self.face_areas() / 3, 3))
        return a

    @property
    def normals(self) -> np.ndarray:
        if self._normals is not None:
            return self._normals
        n = np.zeros_like(self.V)
        fn = self.face_normals(unit=False)
        for k in range(3):
            np.add.at(n, self.F[:, k], fn)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def displaced(self, D) -> "TriMesh":
        m = TriMesh.__new__(TriMesh)
        m.__dict__.update({k: v for k, v in self.__dict__.items()
                           if k in ("F", "edges", "edge_faces", "boundary_edges", "labels")})
        m.V = self.V + D
        m._normals = None
        return m

    # -- discrete curvature ----------------------------------------------------
    def gauss_bonnet(self) -> GaussBonnet:
        sums = self.angle_sums()
        bset = set(self.boundary_vertices.tolist())
        cset = set(self.corners.tolist())
        interior = float(sum(2 * np.pi - sums[v] for v in range(len(self.V)) if v not in bset))
        geodesic = float(sum(np.pi - sums[v] for v in bset - cset))
        inner = [float(sums[v]) for v in sorted(cset)]
        corners = float(sum(np.pi - a for a in inner))
        chi = self.euler_characteristic()
        defect = abs(interior + geodesic + corners - 2 * np.pi * chi)
        return GaussBonnet(interior, geodesic, corners, inner, chi, defect)

    def gauss_bonnet_defect(self) -> float:
        return self.gauss_bonnet().defect

    def shape_operator(self) -> np.ndarray:
        """Per-vertex ``3 x 3`` tensor ``B`` with ``d nu = B dp`` on the tangent plane.

        Each triangle fits the linear map sending its edge vectors to the
        differences of vertex normals; the symmetric part is averaged onto
        vertices with area weights.
        """
        nv = self.normals
        fn = self.face_normals()
        p0, p1, p2 = self._edges_of_faces()
        e1, e2 = p1 - p0, p2 - p0
        t1 = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
        t2 = np.cross(fn, t1)
        T = np.stack([t1, t2], axis=2)                      # (M, 3, 2)
        E = np.einsum("mik,mij->mkj", T, np.stack([e1, e2], 2))
        dn = np.stack([nv[self.F[:, 1]] - nv[self.F[:, 0]], nv[self.F[:, 2]] - nv[self.F[:, 0]]], 2)
        Nn = np.einsum("mik,mij->mkj", T, dn)
        S = Nn @ np.linalg.inv(E)
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
        S3 = np.einsum("mik,mkl,mjl->mij", T, S, T)
        w = self.face_areas()
        acc = np.zeros((len(self.V), 3, 3))
        wsum = np.zeros(len(self.V))
        for k in range(3):
            np.add.at(acc, self.F[:, k], S3 * w[:, None, None])
            np.add.at(wsum, self.F[:, k], w)
        return acc / wsum[:, None, None]

    def mean_curvature(self) -> np.ndarray:
        return np.trace(self.shape_operator(), axis1=1, axis2=2)

    def boundary_geodesic_curvature(self) -> dict:
        """Turning angle over half the adjacent boundary length at each smooth boundary vertex."""
        sums = self.angle_sums()
        length = defaultdict(float)
        for a, b in self.boundary_edges:
            ell = np.linalg.norm(self.V[a] - self.V[b])
            length[a] += ell / 2
            length[b] += ell / 2
        cset = set(self.corners.tolist())
        return {int(v): (np.pi - sums[v]) / length[v] for v in self.boundary_vertices if v not in cset}

    def area_gradient(self) -> np.ndarray:
        """Exact gradient of the total area with respect to each vertex position."""
        fn = self.face_normals()
        g = np.zeros_like(self.V)
        for k in range(3):
            a = self.V[self.F[:, (k + 1) % 3]]
            b = self.V[self.F[:, (k + 2) % 3]]
            np.add.at(g, self.F[:, k], 0.5 * np.cross(fn, b - a))
        return g

    def first_variation(self, X) -> float:
        """Discrete ``delta Sigma(X)`` = exact derivative of mesh area along ``X``."""
        return float(np.sum(self.area_gradient() * X))

    def fundamental_forms(self, vertex: int, plane_normal=None):
        """``B``, ``H`` and, on free-boundary vertices, ``A(nu, nu)``, ``H_dSigma``, ``H_dM``.

        The ambient boundary is a flat plane, so ``A`` and ``H_dM`` vanish.
        """
        B = self.shape_operator()[vertex]
        out = {"B": B, "H": float(np.trace(B))}
        kg = self.boundary_geodesic_curvature()
        if vertex in kg:
            out.update({"A_nunu": 0.0, "H_dM": 0.0, "H_dSigma": float(kg[vertex])})
        return out


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------
def write_off(mesh: TriMesh, path, labels_path=None) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(f"OFF\n{len(mesh.V)} {len(mesh.F)} {len(mesh.edges)}\n")
            for v in mesh.V:
                fh.write(" ".join(repr(float(c)) for c in v) + "\n")
            for f in mesh.F:
                fh.write("3 " + " ".join(str(int(i)) for i in f) + "\n")
        if labels_path is not None:
            with open(labels_path, "w") as fh:
                for (a, b), lab in sorted(mesh.labels.items()):
                    fh.write(f"edge {a} {b} {lab}\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_off(path, labels_path=None) -> TriMesh:
    try:
        with open(path) as fh:
            tokens = [ln.split("#")[0].split() for ln in fh]
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    tokens = [t for t in tokens if t]
    if not tokens or tokens[0][0] != "OFF":
        raise IoFailure("missing OFF header")
    nv, nf = int(tokens[1][0]), int(tokens[1][1])
    V = np.array([[float(c) for c in t[:3]] for t in tokens[2:2 + nv]])
    F = []
    for t in tokens[2 + nv:2 + nv + nf]:
        if int(t[0]) != 3:
            raise IoFailure("only triangular faces are supported")
        F.append([int(c) for c in t[1:4]])
    labels = {}
    if labels_path is not None:
        try:
            with open(labels_path) as fh:
                for ln in fh:
                    parts = ln.split()
                    if not parts:
                        continue
                    if parts[0] != "edge" or parts[3] not in (FIXED, FREE):
                        raise IoFailure(f"bad edge label line: {ln.strip()}")
                    labels[(int(parts[1]), int(parts[2]))] = parts[3]
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    return TriMesh(V, np.array(F, int), labels)


def grid_mesh(points: np.ndarray, shape, periodic=(False, False), labels_fn=None, normals=None) -> TriMesh:
    """Triangulate a structured ``(nu, nv)`` point grid, C-ordered, each quad split in two.

    ``labels_fn(a_index, b_index)`` receives the grid multi-indices of a boundary
    edge and returns ``FIXED`` or ``FREE``.
    """
    nu, nv = shape
    idx = np.arange(nu * nv).reshape(nu, nv)
    faces = []
    iu = range(nu if periodic[0] else nu - 1)
    jv = range(nv if periodic[1] else nv - 1)
    for i in iu:
        for j in jv:
            a, b = idx[i, j], idx[(i + 1) % nu, j]
            c, d = idx[(i + 1) % nu, (j + 1) % nv], idx[i, (j + 1) % nv]
            # alternate the diagonal so the mesh has no preferred direction
            if (i + j) % 2 == 0:
                faces += [(a, b, c), (a, c, d)]
            else:
                faces += [(a, b, d), (b, c, d)]
    mesh = TriMesh(points, np.array(faces), normals=normals)
    if labels_fn is not None:
        labels = {}
        for e in mesh.boundary_edges:
            ia, ib = np.unravel_index(e[0], shape), np.unravel_index(e[1], shape)
            labels[e] = labels_fn(ia, ib)
        mesh = TriMesh(points, np.array(faces), labels, normals=normals)
    return mesh
