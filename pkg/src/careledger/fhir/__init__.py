from .connector import Connector, FetchResult, Integrity
from .mockstore import MockFhirStore
from .paths import ParsedPath, validate_reference_path
from .pointers import (
    FhirResource,
    ReferencePointer,
    canonical_resource_bytes,
    make_reference_pointer,
    resource_data_hash,
)
from .resource_types import R4_RESOURCE_TYPES

__all__ = [
    "Connector",
    "FetchResult",
    "FhirResource",
    "Integrity",
    "MockFhirStore",
    "ParsedPath",
    "R4_RESOURCE_TYPES",
    "ReferencePointer",
    "canonical_resource_bytes",
    "make_reference_pointer",
    "resource_data_hash",
    "validate_reference_path",
]
