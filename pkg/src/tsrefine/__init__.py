"""Adaptive spline refinement on unstructured quadrilateral meshes."""

from .basis import (Basis, assemble_basis, bspline_eval, build_chart,
                    build_ev_embedding, eval_ev, eval_structured,
                    local_knot_vectors, numerical_rank)
from .bezier import bezier_mesh, continuity_map
from .direction import (check_label_lineage, compute_direction_labeling,
                        validate_labeling)
from .mesh import (GridPoint, MeshError, TMesh, dumps_canonical, load_mesh,
                   save_doc, uniform_refine_rebase, validate_regular)
from .refine import RefineTrace, refine, refine_batch, resolve_marks
from .verify import (check_analysis_suitability, check_complexity_ratio,
                     check_linear_independence, check_locality,
                     check_poly_reproduction, check_quasi_uniformity,
                     check_smoothness)

__version__ = "0.1.0"

__all__ = [
    "Basis", "GridPoint", "MeshError", "RefineTrace", "TMesh",
    "assemble_basis", "bezier_mesh", "bspline_eval", "build_chart",
    "build_ev_embedding", "check_analysis_suitability",
    "check_complexity_ratio", "check_label_lineage",
    "check_linear_independence", "check_locality", "check_poly_reproduction",
    "check_quasi_uniformity", "check_smoothness",
    "compute_direction_labeling", "continuity_map", "dumps_canonical",
    "eval_ev", "eval_structured", "load_mesh", "local_knot_vectors",
    "numerical_rank", "refine", "refine_batch", "resolve_marks", "save_doc",
    "uniform_refine_rebase", "validate_labeling", "validate_regular",
    "__version__",
]
