"""JSON import/export of meshes."""

from __future__ import annotations

import json
from itertools import product

import numpy as np

from ..errors import MeshError
from .mesh import MeshGeometry, orient_apply, orientation_codes, face_dir_side
from .reference import ReferenceElement

FORMAT = "ksvddg-mesh"
VERSION = 1


def mesh_to_dict(mesh: MeshGeometry) -> dict:
    d = mesh.d
    neighbors = []
    tags = []
    for e in range(mesh.nel):
        row, trow = [], []
        for f in range(2 * d):
            if mesh.nbr[e, f] >= 0:
                row.append([int(mesh.nbr[e, f]), int(mesh.nbr_face[e, f]), int(mesh.orient[e, f])])
                trow.append(None)
            else:
                row.append(None)
                trow.append(mesh.bc_names[mesh.bc[e, f]] if mesh.bc[e, f] >= 0 else "boundary")
        neighbors.append(row)
        tags.append(trow)
    return {
        "format": FORMAT,
        "version": VERSION,
        "dimension": d,
        "map_degree": mesh.map_degree,
        "nodes": mesh.nodes.tolist(),
        "elements": mesh.node_ids.tolist(),
        "neighbors": neighbors,
        "boundary_tags": tags,
        "boundary_names": list(mesh.bc_names),
    }


def save_mesh(mesh: MeshGeometry, path) -> None:
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(mesh), fh)


def _face_corner_ids(conn: np.ndarray, d: int, q: int, f: int) -> np.ndarray:
    k, side = face_dir_side(f)
    t = conn.reshape((q + 1,) * d)
    sl = [slice(0, q + 1, q)] * d
    sl[d - 1 - k] = q if side else 0
    return t[tuple(sl)]


def _infer_neighbors(conn: np.ndarray, d: int, q: int):
    nel = conn.shape[0]
    nf = 2 * d
    nbr = -np.ones((nel, nf), dtype=int)
    nbr_face = -np.ones((nel, nf), dtype=int)
    orient = np.zeros((nel, nf), dtype=int)
    table = {}
    for e in range(nel):
        for f in range(nf):
            c = _face_corner_ids(conn[e], d, q, f)
            table.setdefault(frozenset(c.ravel().tolist()), []).append((e, f, c))
    for owners in table.values():
        if len(owners) > 2:
            raise MeshError("a face is shared by more than two elements", element=owners[0][0])
        if len(owners) == 2:
            (e0, f0, c0), (e1, f1, c1) = owners
            for (ea, fa, ca), (eb, fb, cb) in (((e0, f0, c0), (e1, f1, c1)), ((e1, f1, c1), (e0, f0, c0))):
                for code in orientation_codes(d):
                    if np.array_equal(orient_apply(cb, code, d), ca):
                        break
                else:
                    raise MeshError("cannot match face orientation", element=ea)
                nbr[ea, fa], nbr_face[ea, fa], orient[ea, fa] = eb, fb, code
    return nbr, nbr_face, orient


def mesh_from_dict(doc: dict, ref: ReferenceElement) -> MeshGeometry:
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    if int(doc.get("version", -1)) != VERSION:
        raise ValueError(f"unsupported mesh version {doc.get('version')}")
    d = int(doc["dimension"])
    q = int(doc["map_degree"])
    nodes = np.asarray(doc["nodes"], dtype=float)
    conn = np.asarray(doc["elements"], dtype=int)
    if nodes.ndim != 2 or nodes.shape[1] != d:
        raise ValueError("node array does not match the dimension")
    if conn.shape[1] != (q + 1) ** d:
        raise ValueError("connectivity does not match the map degree")
    nel, nf = conn.shape[0], 2 * d
    if doc.get("neighbors") is not None:
        nbr = -np.ones((nel, nf), dtype=int)
        nbr_face = -np.ones((nel, nf), dtype=int)
        orient = np.zeros((nel, nf), dtype=int)
        for e, row in enumerate(doc["neighbors"]):
            for f, item in enumerate(row):
                if item is not None:
                    nbr[e, f], nbr_face[e, f], orient[e, f] = item
    else:
        nbr, nbr_face, orient = _infer_neighbors(conn, d, q)
    tags = doc.get("boundary_tags")
    names: list = list(doc.get("boundary_names", []))
    bc = -np.ones((nel, nf), dtype=int)
    for e in range(nel):
        for f in range(nf):
            if nbr[e, f] >= 0:
                continue
            name = tags[e][f] if tags is not None and tags[e][f] is not None else "boundary"
            if name not in names:
                names.append(name)
            bc[e, f] = names.index(name)
    return MeshGeometry(ref, q, nodes, conn, nbr, nbr_face, orient, bc, names)


def load_mesh(path, ref: ReferenceElement) -> MeshGeometry:
    with open(path) as fh:
        return mesh_from_dict(json.load(fh), ref)
