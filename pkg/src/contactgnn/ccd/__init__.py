"""Continuous collision detection for triangle meshes under linear motion."""
from .broadphase import swept_aabb_broadphase
from .detect import (
    EE,
    VF,
    CcdConfig,
    CollisionEvent,
    ContactField,
    Trajectory,
    detect_contacts,
    field_from_events,
    pair_response,
)
from .oracle import oracle_detect, oracle_margins, static_contacts
from .predicates import (
    coplanarity_cubic,
    ee_response,
    ee_sufficiency,
    vf_response,
    vf_sufficiency,
)
from .roots import ALWAYS_COPLANAR, batch_cubic_roots, cubic_roots_in_interval, horner

__all__ = [
    "ALWAYS_COPLANAR", "EE", "VF", "CcdConfig", "CollisionEvent", "ContactField", "Trajectory",
    "batch_cubic_roots", "coplanarity_cubic", "cubic_roots_in_interval", "detect_contacts",
    "ee_response", "ee_sufficiency", "field_from_events", "horner", "oracle_detect", "oracle_margins",
    "pair_response", "static_contacts", "swept_aabb_broadphase", "vf_response", "vf_sufficiency",
]
