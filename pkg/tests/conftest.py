import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from wirestack import _kernels_py

try:
    from wirestack import _speedups
except ImportError:
    _speedups = None


def kernel_backends():
    backends = [_kernels_py]
    if _speedups is not None:
        backends.append(_speedups)
    return backends


@pytest.fixture(params=kernel_backends(), ids=lambda mod: mod.BACKEND)
def kernel(request):
    """Each importable codec backend (pure Python, compiled)."""
    return request.param
