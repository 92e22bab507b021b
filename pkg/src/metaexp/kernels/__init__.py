"""Hot inner-loop kernels with a compiled backend and a pure-Python fallback.

The compiled module is used when it imports and ``METAEXP_PURE_PYTHON`` is
unset; ``BACKEND`` names the active choice.  Both backends live side by side
as ``python`` and (when built) ``compiled`` for benchmarks and parity tests.
"""
import os

from . import _pykernels as python

compiled = None
try:
    from . import _ckernels as compiled  # noqa: F811
except ImportError:
    compiled = None

if compiled is not None and not os.environ.get("METAEXP_PURE_PYTHON"):
    _impl = compiled
    BACKEND = "compiled"
else:
    _impl = python
    BACKEND = "python"

discounted_returns = _impl.discounted_returns
masked_returns = _impl.masked_returns
gae_advantages = _impl.gae_advantages
krazy_move = _impl.krazy_move
encode_window = _impl.encode_window
encode_grid = _impl.encode_grid

N_CHANNELS = python.N_CHANNELS
AGENT_CHANNEL = python.AGENT_CHANNEL
