"""World-model reinforcement learning for limit order book trading."""
from __future__ import annotations

__version__ = "0.1.0"
