"""Structure-preserving mesh wave simulator with learned Hodge and damping operators."""
from __future__ import annotations

__version__ = "0.1.0"
