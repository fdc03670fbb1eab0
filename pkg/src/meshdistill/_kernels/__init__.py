"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension (``_fast``, built from Cython) is preferred; when it
is missing, or when ``MESHDISTILL_FORCE_NUMPY=1`` is set, the pure-numpy
implementations are used instead.  Both backends expose the same functions
with identical semantics:

- ``trilerp_gather`` / ``trilerp_scatter``: the forward and backward halves
  of trilinear interpolation into a feature table.
- ``hash_corners``: per-level corner rows and trilinear weights for the
  multiresolution hash encoding.
- ``composite``: alpha compositing weights along ray samples.
- ``mc_collect``: marching-cubes triangle emission as global edge keys.
- ``raster_fill``: z-buffered triangle rasterization.
- ``dda_mark``: voxel traversal marking for ray/grid observability.
"""

from __future__ import annotations

import os

from . import _numpy_impl

if os.environ.get("MESHDISTILL_FORCE_NUMPY") == "1":
    _impl = _numpy_impl
else:
    try:
        from . import _fast as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _numpy_impl

BACKEND: str = _impl.BACKEND

trilerp_gather = _impl.trilerp_gather
trilerp_scatter = _impl.trilerp_scatter
hash_corners = _impl.hash_corners
composite = _impl.composite
mc_collect = _impl.mc_collect
raster_fill = _impl.raster_fill
dda_mark = _impl.dda_mark

__all__ = [
    "BACKEND",
    "composite",
    "dda_mark",
    "hash_corners",
    "mc_collect",
    "raster_fill",
    "trilerp_gather",
    "trilerp_scatter",
]
