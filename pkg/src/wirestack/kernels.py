"""Backend selection for the codec kernels.

Imports the compiled ``_speedups`` extension when it is built, otherwise
the pure-Python ``_kernels_py`` module. ``WIRESTACK_PURE=1`` in the
environment forces the pure backend (used by the backend-comparison
benchmark and by tests).

``BACKEND`` is ``"c"`` or ``"python"``.
"""

import os

if os.environ.get("WIRESTACK_PURE"):
    from wirestack import _kernels_py as _impl
else:
    try:
        from wirestack import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        from wirestack import _kernels_py as _impl

BACKEND = _impl.BACKEND

BASP_SIZE = _impl.BASP_SIZE
ORDERING_SIZE = _impl.ORDERING_SIZE
RELIABILITY_SIZE = _impl.RELIABILITY_SIZE
SLICE_SIZE = _impl.SLICE_SIZE
SEQ_SPACE = _impl.SEQ_SPACE
SEQ_HALF = _impl.SEQ_HALF

pack_basp = _impl.pack_basp
unpack_basp = _impl.unpack_basp
pack_ordering = _impl.pack_ordering
unpack_ordering = _impl.unpack_ordering
pack_reliability = _impl.pack_reliability
unpack_reliability = _impl.unpack_reliability
pack_slice = _impl.pack_slice
unpack_slice = _impl.unpack_slice
seq_is_before = _impl.seq_is_before
scan_stream = _impl.scan_stream
