"""Smooth dynamics on tori: maps, invariant bundles, periodic and homoclinic points."""

from .bundles import (
    BundleFrame,
    estimate_unstable_bundle,
    push_frame,
    restricted_cocycle,
    verify_partial_hyperbolicity,
)
from .maps import (
    CustomMap,
    LinearMap,
    LocalRotation,
    PerturbedMap,
    ProductMap,
    StandardMap,
    TorusMap,
    derivative_cocycle,
    linear_anosov,
    map_from_dict,
    near_identity_cocycle,
    perturb_local_rotation,
    product_map,
    standard_map,
    wrap,
)
from .points import (
    HomoclinicDatum,
    LeafPair,
    PeriodicPointDatum,
    check_clearance,
    homoclinic_linear,
    leaf_pair,
    newton_refine_periodic,
    periodic_points_linear,
    spectral_projector,
    torus_distance,
)

__all__ = [
    "BundleFrame", "CustomMap", "HomoclinicDatum", "LeafPair", "LinearMap", "LocalRotation",
    "PerturbedMap", "PeriodicPointDatum", "ProductMap", "StandardMap", "TorusMap",
    "check_clearance", "derivative_cocycle", "estimate_unstable_bundle", "homoclinic_linear",
    "leaf_pair", "linear_anosov", "map_from_dict", "near_identity_cocycle", "newton_refine_periodic",
    "periodic_points_linear", "perturb_local_rotation", "product_map", "push_frame",
    "restricted_cocycle", "spectral_projector", "standard_map", "torus_distance",
    "verify_partial_hyperbolicity", "wrap",
]
