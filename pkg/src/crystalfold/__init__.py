from .embed import Embedding, build_embedding, embedding_distortion, rho
from .group import (
    CrystalGroup,
    Isometry,
    LocalGroup,
    apply,
    apply_many,
    compose,
    enumerate_local_group,
    identity,
    inverse,
    invariant_bump,
    stabilizer,
    translation,
)
from .ml import (
    GPSampler,
    InvariantKernel,
    gp_sample,
    gp_sample_grid,
    gram,
    kernel_eval,
    mlp_forward,
    svm_predict,
    svm_train,
)
from .orbitgraph import OrbitGraph, build_net, build_orbit_graph
from .polytope import ConvexPolytope, compute_transversal, is_exact
from .quotient import (
    QuotientContext,
    build_context,
    project,
    quotient_distance,
)
from .registry import get_group, list_groups, load_group_file
from .spectral import (
    EigenBasis,
    boundary_flux,
    eigenbasis_galerkin,
    eigenbasis_spectral,
    energy_form,
    interpolate,
    orthonormality_check,
)

__all__ = [
    "ConvexPolytope",
    "CrystalGroup",
    "EigenBasis",
    "Embedding",
    "GPSampler",
    "InvariantKernel",
    "Isometry",
    "LocalGroup",
    "OrbitGraph",
    "QuotientContext",
    "apply",
    "apply_many",
    "boundary_flux",
    "build_context",
    "build_embedding",
    "build_net",
    "build_orbit_graph",
    "compose",
    "compute_transversal",
    "eigenbasis_galerkin",
    "eigenbasis_spectral",
    "embedding_distortion",
    "energy_form",
    "enumerate_local_group",
    "get_group",
    "gp_sample",
    "gp_sample_grid",
    "gram",
    "identity",
    "interpolate",
    "invariant_bump",
    "inverse",
    "is_exact",
    "kernel_eval",
    "list_groups",
    "load_group_file",
    "mlp_forward",
    "orthonormality_check",
    "project",
    "quotient_distance",
    "rho",
    "stabilizer",
    "svm_predict",
    "svm_train",
    "translation",
]
