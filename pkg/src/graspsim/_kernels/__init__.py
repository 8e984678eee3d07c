"""Ray-cast kernel selection.

Prefers the compiled extension when it imported cleanly; falls back to
the vectorized numpy implementation otherwise. Set GRASPSIM_PURE_PYTHON=1
to force the fallback (useful for the parity test and the benchmark).
"""

import os

from . import _raycast_py

KIND_SPHERE = _raycast_py.KIND_SPHERE
KIND_BOX = _raycast_py.KIND_BOX
KIND_CYLINDER = _raycast_py.KIND_CYLINDER

raycast_py = _raycast_py.raycast

if os.environ.get("GRASPSIM_PURE_PYTHON"):
    raycast = raycast_py
    BACKEND = "python"
else:
    try:
        from . import _raycast_cy

        raycast = _raycast_cy.raycast
        BACKEND = "compiled"
    except ImportError:
        raycast = raycast_py
        BACKEND = "python"
