"""turbo3d: analysis and simulation toolkit for 3-dimensional turbo codes."""

from turbo3d.trellis import (
    GeneratorSpec,
    TerminationMode,
    Trellis,
    TailbitingError,
    UMTS_SPEC,
    PATCH_SPEC,
    build_trellis,
    encode,
    path_weight,
)

__version__ = "0.1.0"
