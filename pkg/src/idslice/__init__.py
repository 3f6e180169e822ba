"""idslice: reverse-engineer snowflake-style ID layouts, enumerate the ID
space for a time window, fetch candidates through a pluggable harness, and
compute census statistics over the results."""

__version__ = "0.1.0"

from .idcodec import (
    DEFAULT_LAYOUT,
    DecodedId,
    FieldOverflow,
    IdLayout,
    LayoutError,
    SuffixPattern,
    create_time_from_id,
    decode,
    encode,
)

__all__ = [
    "DEFAULT_LAYOUT",
    "DecodedId",
    "FieldOverflow",
    "IdLayout",
    "LayoutError",
    "SuffixPattern",
    "create_time_from_id",
    "decode",
    "encode",
    "__version__",
]
