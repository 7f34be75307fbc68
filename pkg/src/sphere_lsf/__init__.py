"""Locality-sensitive filtering on the unit sphere, with private range counting."""

from .errors import (
    AllocationError,
    AuditFailure,
    DimensionError,
    DomainError,
    FormatError,
    NormError,
    RangeError,
    SphereLSFError,
    TooSmallError,
    VerificationFailure,
)
from .index import (
    CLOSETOP1,
    TENSOR,
    TOP1,
    BucketTable,
    CostReport,
    CountTable,
    FilterStructure,
    LSFIndex,
    SphereDataset,
    build_closetop1,
    build_index,
    build_tensor,
    build_top1,
    query_ann,
    query_count,
    to_count_table,
)
from .params import (
    AnnParams,
    ApplicabilityWarning,
    PrivacyParams,
    TensorParams,
    derive_ann_params,
    derive_privacy_params,
    derive_tensor_params,
    euclidean_to_sphere_thresholds,
)
from .privacy import (
    CompositionMode,
    PrivateCountTable,
    dp_audit,
    median_answer,
    plan_composition,
    privatize,
    query_private_count,
)

__version__ = "0.1.0"
