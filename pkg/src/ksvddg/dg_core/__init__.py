"""Reference elements and mesh geometry."""

from .reference import ReferenceElement, build_reference, gauss_legendre, gauss_lobatto, lagrange_matrices
from .mesh import (MeshSpec, MeshGeometry, FaceTrace, generate_mesh, face_trace_indices,
                   orient_apply, orient_inverse, orientation_codes, face_dir_side, face_axis, rebuild)
from .meshio import mesh_to_dict, mesh_from_dict, save_mesh, load_mesh

__all__ = [
    "ReferenceElement", "build_reference", "gauss_legendre", "gauss_lobatto", "lagrange_matrices",
    "MeshSpec", "MeshGeometry", "FaceTrace", "generate_mesh", "face_trace_indices",
    "orient_apply", "orient_inverse", "orientation_codes", "face_dir_side", "face_axis", "rebuild",
    "mesh_to_dict", "mesh_from_dict", "save_mesh", "load_mesh",
]
