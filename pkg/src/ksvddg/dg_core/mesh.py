"""Hexahedral / quadrilateral mesh geometry for tensor-product DG.

Array conventions
-----------------
Per-element tensors are stored with the slowest reference direction first:
``(i_d, ..., i_1)``, so reference direction ``k`` (0 = x) lives on tensor
axis ``d - 1 - k``.  Local face ``f = 2k + side`` is the face
``xi_k = side``.  Face arrays drop the normal axis and keep the remaining
axes in the same order.

Orientation codes map a neighbor's face array onto the local face layout:
in 2-d, 1 reverses the tangential axis; in 3-d, bit 4 swaps the two
tangential axes, then bit 1 flips the fast axis and bit 2 the slow one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ..errors import MeshError
from ..tensor_linalg import tensor_apply
from .reference import ReferenceElement, gauss_lobatto, lagrange_matrices

AXIS_NAMES = "xyz"


def face_dir_side(f: int):
    return f // 2, f % 2


def face_axis(d: int, f: int) -> int:
    return d - 1 - f // 2


def orientation_codes(d: int):
    return (0, 1) if d == 2 else tuple(range(8))


def orient_apply(x: np.ndarray, code: int, d: int) -> np.ndarray:
    """Re-index face data (trailing ``d - 1`` axes) from a neighbor's layout to ours."""
    if code not in orientation_codes(d):
        raise ValueError(f"invalid orientation code {code} for dimension {d}")
    if d == 2:
        return x[..., ::-1] if code & 1 else x
    if code & 4:
        x = np.swapaxes(x, -1, -2)
    if code & 1:
        x = x[..., ::-1]
    if code & 2:
        x = x[..., ::-1, :]
    return x


def orient_inverse(code: int, d: int) -> int:
    n = 3
    grid = np.arange(n ** (d - 1)).reshape((n,) * (d - 1))
    target = orient_apply(grid, code, d)
    for c in orientation_codes(d):
        if np.array_equal(orient_apply(target, c, d), grid):
            return c
    raise AssertionError("orientation group is not closed")


@dataclass(frozen=True)
class FaceTrace:
    """Nodes of one element face.

    ``indices`` lists 0-based multi-indices ``(i_1, ..., i_d)`` of the face
    nodes in the face's tensor layout; ``permutation`` re-indexes flattened
    neighbor face data into that layout for the given orientation.
    """

    face: int
    orientation: int
    indices: np.ndarray
    permutation: np.ndarray


def face_trace_indices(ref: ReferenceElement, face: int, orientation: int = 0, d: int = 2) -> FaceTrace:
    if not 0 <= face < 2 * d:
        raise ValueError(f"face id {face} out of range for dimension {d}")
    if orientation not in orientation_codes(d):
        raise ValueError(f"invalid orientation code {orientation} for dimension {d}")
    n = ref.n
    k, side = face_dir_side(face)
    fixed = 0 if side == 0 else n - 1
    tang = [j for j in range(d) if j != k]
    rows = []
    for t in product(range(n), repeat=d - 1):
        # t follows tensor order: slowest tangential direction first
        idx = [0] * d
        idx[k] = fixed
        for j, v in zip(reversed(tang), t):
            idx[j] = v
        rows.append(idx)
    perm = orient_apply(np.arange(n ** (d - 1)).reshape((n,) * (d - 1)), orientation, d).ravel()
    return FaceTrace(face, orientation, np.array(rows, dtype=int), perm.copy())


@dataclass(frozen=True)
class MeshSpec:
    """Structured mesh recipe.

    ``kind`` is ``cartesian``, ``perturbed`` (seeded jitter of interior
    vertices by ``amplitude`` cell widths) or ``scaled`` (cells graded
    toward the centre with strength ``amplitude`` in [0, 1)).
    ``curvature`` adds a smooth interior displacement of that many cell
    widths, which needs ``map_degree >= 2`` to be represented.
    """

    kind: str = "cartesian"
    counts: tuple = (8, 8)
    extents: tuple = ((0.0, 1.0), (0.0, 1.0))
    amplitude: float = 0.0
    curvature: float = 0.0
    map_degree: int = 1
    seed: int = 0
    periodic: tuple | None = None

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) not in (2, 3) or min(counts) < 1:
            raise ValueError(f"counts must be 2 or 3 positive integers, got {self.counts}")
        ext = tuple((float(a), float(b)) for a, b in self.extents)
        if len(ext) != len(counts) or any(b <= a for a, b in ext):
            raise ValueError("extents must give one increasing interval per direction")
        per = tuple(bool(x) for x in (self.periodic or (False,) * len(counts)))
        if len(per) != len(counts):
            raise ValueError("periodic flags must match the dimension")
        if self.kind not in ("cartesian", "perturbed", "scaled"):
            raise ValueError(f"unknown mesh kind {self.kind!r}")
        if self.map_degree < 1:
            raise ValueError("map_degree must be >= 1")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "periodic", per)

    @property
    def dimension(self) -> int:
        return len(self.counts)


@dataclass
class MeshGeometry:
    """Element maps evaluated at quadrature points plus face connectivity."""

    ref: ReferenceElement
    map_degree: int
    nodes: np.ndarray            # (n_nodes, d)
    node_ids: np.ndarray         # (nel, (q+1)**d), tensor order, fast index last
    nbr: np.ndarray              # (nel, 2d), -1 on boundary
    nbr_face: np.ndarray
    orient: np.ndarray
    bc: np.ndarray               # (nel, 2d), index into bc_names or -1
    bc_names: list
    x_vol: np.ndarray = field(init=False)
    det: np.ndarray = field(init=False)
    metric: np.ndarray = field(init=False)
    x_face: np.ndarray = field(init=False)
    normal: np.ndarray = field(init=False)
    area: np.ndarray = field(init=False)
    x_nodes: np.ndarray = field(init=False)

    def __post_init__(self):
        self._build()

    @property
    def d(self) -> int:
        return self.nodes.shape[1]

    @property
    def nel(self) -> int:
        return self.node_ids.shape[0]

    @property
    def n_faces(self) -> int:
        return 2 * self.d

    def element_map_nodes(self) -> np.ndarray:
        """Map coefficients, shape ``(nel, d, q+1, ..., q+1)``."""
        d, q = self.d, self.map_degree
        X = self.nodes[self.node_ids]                     # (nel, (q+1)^d, d)
        X = X.reshape((self.nel,) + (q + 1,) * d + (d,))
        return np.moveaxis(X, -1, 1)

    def _build(self):
        ref, d, q = self.ref, self.d, self.map_degree
        qn, _ = gauss_lobatto(q + 1)
        qn[0], qn[-1] = 0.0, 1.0
        Gq, Dq = lagrange_matrices(qn, ref.points)
        Xn = self.element_map_nodes()

        self.x_vol = np.moveaxis(tensor_apply(Xn, [Gq] * d), 1, -1)
        jac = np.empty(self.x_vol.shape + (d,))
        for k in range(d):
            mats = [Gq] * d
            mats[d - 1 - k] = Dq
            jac[..., k] = np.moveaxis(tensor_apply(Xn, mats), 1, -1)
        det = np.linalg.det(jac)
        self._check_positive(det, "volume")
        inv = np.linalg.inv(jac)                          # inv[..., k, m] = d xi_k / d x_m
        self.det = det
        self.metric = det[..., None, None] * inv

        nf = 2 * d
        fshape = (self.nel, nf) + (ref.mu,) * (d - 1)
        self.x_face = np.empty(fshape + (d,))
        self.normal = np.empty(fshape + (d,))
        for f in range(nf):
            k, side = face_dir_side(f)
            ax = d - 1 - k
            Ge, De = lagrange_matrices(qn, [float(side)])
            mats = [Gq] * d
            mats[ax] = Ge
            xf = tensor_apply(Xn, mats)
            self.x_face[:, f] = np.moveaxis(np.squeeze(xf, axis=2 + ax), 1, -1)
            fj = np.empty(self.x_face.shape[:1] + self.x_face.shape[2:] + (d,))
            for k2 in range(d):
                m2 = list(mats)
                m2[d - 1 - k2] = De if k2 == k else Dq
                fj[..., k2] = np.moveaxis(np.squeeze(tensor_apply(Xn, m2), axis=2 + ax), 1, -1)
            fdet = np.linalg.det(fj)
            self._check_positive(fdet, f"face {f}")
            finv = np.linalg.inv(fj)
            sign = 1.0 if side == 1 else -1.0
            self.normal[:, f] = sign * fdet[..., None] * finv[..., k, :]
        self.area = np.linalg.norm(self.normal, axis=-1)

        Gn, _ = lagrange_matrices(qn, ref.nodes)
        self.x_nodes = np.moveaxis(tensor_apply(Xn, [Gn] * d), 1, -1)
        self._group_faces()

    def _check_positive(self, det, where):
        bad = np.nonzero(np.reshape(det, (self.nel, -1)).min(axis=1) <= 0.0)[0]
        if bad.size:
            raise MeshError(f"element {bad[0]} has a non-positive Jacobian at a {where} point",
                            element=int(bad[0]))

    def _group_faces(self):
        interior = {}
        boundary = {}
        for f in range(self.n_faces):
            for e in range(self.nel):
                nb = self.nbr[e, f]
                if nb >= 0:
                    interior.setdefault((f, int(self.nbr_face[e, f]), int(self.orient[e, f])), []).append(e)
                else:
                    boundary.setdefault((f, int(self.bc[e, f])), []).append(e)
        self.interior_groups = [(f, nf, o, np.array(es), self.nbr[np.array(es), f])
                                for (f, nf, o), es in sorted(interior.items())]
        self.boundary_groups = [(f, tag, np.array(es)) for (f, tag), es in sorted(boundary.items())]

    @property
    def unit_normal(self) -> np.ndarray:
        return self.normal / self.area[..., None]

    def measure(self) -> float:
        w = self.ref.weights
        wt = w
        for _ in range(self.d - 1):
            wt = np.multiply.outer(wt, w)
        return float(np.sum(self.det * wt))


# ----------------------------------------------------------------------------
# structured generation
# ----------------------------------------------------------------------------

def _vertex_coordinates(spec: MeshSpec, rng) -> np.ndarray:
    d = spec.dimension
    lines = []
    for k in range(d):
        n = spec.counts[k]
        a, b = spec.extents[k]
        s = np.linspace(0.0, 1.0, n + 1)
        if spec.kind == "scaled":
            amp = float(spec.amplitude)
            if not 0.0 <= amp < 1.0:
                raise ValueError("scaled meshes need 0 <= amplitude < 1")
            s = s - amp * np.sin(2.0 * np.pi * s) / (2.0 * np.pi)
        lines.append(a + (b - a) * s)
    grids = np.meshgrid(*reversed(lines), indexing="ij")   # slowest direction first
    V = np.stack(list(reversed(grids)), axis=-1)          # (n_d+1, ..., n_1+1, d)
    if spec.kind == "perturbed" and spec.amplitude > 0.0:
        interior = np.ones(V.shape[:-1], dtype=bool)
        for k in range(d):
            ax = d - 1 - k
            sl = [slice(None)] * d
            sl[ax] = [0, -1]
            interior[tuple(sl)] = False
        h = np.array([(b - a) / n for (a, b), n in zip(spec.extents, spec.counts)])
        jitter = rng.uniform(-1.0, 1.0, size=V.shape) * spec.amplitude * h
        V = V + np.where(interior[..., None], jitter, 0.0)
    return V


def _curvature_displacement(spec: MeshSpec, x: np.ndarray) -> np.ndarray:
    d = spec.dimension
    lo = np.array([a for a, _ in spec.extents])
    L = np.array([b - a for a, b in spec.extents])
    h = L / np.array(spec.counts)
    xh = (x - lo) / L
    bump = np.prod(np.sin(np.pi * xh), axis=-1)
    disp = np.empty_like(x)
    for m in range(d):
        disp[..., m] = spec.curvature * h[m] * bump * np.sin(2.0 * np.pi * xh[..., (m + 1) % d])
    return disp


def generate_mesh(spec: MeshSpec, ref: ReferenceElement) -> MeshGeometry:
    """Build a structured mesh; element ids run fastest in x."""
    d = spec.dimension
    q = spec.map_degree
    rng = np.random.default_rng(spec.seed)
    V = _vertex_coordinates(spec, rng)
    counts = spec.counts
    shape_e = tuple(reversed(counts))                     # (n_d, ..., n_1)
    nel = int(np.prod(counts))
    E = np.array(np.unravel_index(np.arange(nel), shape_e)).T   # (nel, d), slow first

    qn, _ = gauss_lobatto(q + 1)
    qn[0], qn[-1] = 0.0, 1.0
    L = np.stack([1.0 - qn, qn], axis=1)                  # (q+1, 2)

    corners = np.empty((nel,) + (2,) * d + (d,))
    for c in product((0, 1), repeat=d):
        idx = tuple(E[:, a] + c[a] for a in range(d))
        corners[(slice(None),) + c] = V[idx]
    X = tensor_apply(np.moveaxis(corners, -1, 1), [L] * d)   # (nel, d, q+1, ...)
    X = np.moveaxis(X, 1, -1)
    if spec.curvature:
        X = X + _curvature_displacement(spec, X)

    gshape = tuple(n * q + 1 for n in shape_e)
    local = np.array(list(product(range(q + 1), repeat=d)))    # (nloc, d), slow first
    gidx = E[:, None, :] * q + local[None, :, :]
    node_ids_full = np.ravel_multi_index(tuple(gidx[..., a] for a in range(d)), gshape)
    nodes = np.zeros((int(np.prod(gshape)), d))
    nodes[node_ids_full.ravel()] = X.reshape(-1, d)
    # periodic meshes keep separate nodes on opposite boundaries

    nf = 2 * d
    nbr = -np.ones((nel, nf), dtype=int)
    nbr_face = -np.ones((nel, nf), dtype=int)
    orient = np.zeros((nel, nf), dtype=int)
    bc = -np.ones((nel, nf), dtype=int)
    bc_names = []
    for f in range(nf):
        k, side = face_dir_side(f)
        ax = d - 1 - k
        step = 1 if side == 1 else -1
        En = E.copy()
        En[:, ax] += step
        n_ax = shape_e[ax]
        outside = (En[:, ax] < 0) | (En[:, ax] >= n_ax)
        if spec.periodic[k]:
            En[:, ax] %= n_ax
            outside[:] = False
        inside = ~outside
        nbr[inside, f] = np.ravel_multi_index(tuple(En[inside, a] for a in range(d)), shape_e)
        nbr_face[inside, f] = 2 * k + (1 - side)
        if outside.any():
            name = f"{AXIS_NAMES[k]}{'max' if side else 'min'}"
            bc_names.append(name)
            bc[outside, f] = len(bc_names) - 1
    return MeshGeometry(ref, q, nodes, node_ids_full, nbr, nbr_face, orient, bc, bc_names)


def rebuild(mesh: MeshGeometry, ref: ReferenceElement) -> MeshGeometry:
    """Same mesh, different reference element."""
    return MeshGeometry(ref, mesh.map_degree, mesh.nodes, mesh.node_ids, mesh.nbr,
                        mesh.nbr_face, mesh.orient, mesh.bc, list(mesh.bc_names))
