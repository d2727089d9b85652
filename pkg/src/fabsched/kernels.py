"""Kernel backend selection: compiled extension if built, numpy fallback otherwise.

Set FABSCHED_PURE=1 to force the fallback. Both backends are bit-identical;
tests assert exact equality on randomized inputs and
benchmarks/bench_backends.py compares their speed.
"""

from __future__ import annotations

import os

if os.environ.get("FABSCHED_PURE") == "1":
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

assemble_follower_obs = _impl.assemble_follower_obs
gae_advantages = _impl.gae_advantages
