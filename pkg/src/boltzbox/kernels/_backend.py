"""Select the compiled quadrature core if present, else the numpy fallback.

Set BOLTZBOX_FORCE_FALLBACK=1 to insist on the pure-numpy core (used by the
backend-equality tests and the benchmark).  Both cores implement the same
contract; results agree to roundoff but are only bit-reproducible within a
single backend.
"""

import os

from . import _core_py

if os.environ.get("BOLTZBOX_FORCE_FALLBACK", "") == "1":
    core = _core_py
    backend_name = "python"
else:
    try:
        from . import _core as _core_c

        core = _core_c
        backend_name = "compiled"
    except ImportError:  # no compiler at build time
        core = _core_py
        backend_name = "python"
