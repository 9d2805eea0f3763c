"""Core containers and plumbing for ProJIVE.

- Data containers: multi-block observations, ranks, parameters, noise
- Stacked layout of the block model and the covariance it implies
- Exception hierarchy and shared numerical constants
- Event bus for fit telemetry

Configuration (`projive.core.config`) and file I/O (`projive.core.io`) are
imported from their modules directly.
"""

from projive.core.data import (
    BlockRanks,
    DiagonalNoise,
    IsotropicNoise,
    MultiBlockData,
    NoiseModel,
    ProjiveParams,
)
from projive.core.errors import ProjiveError
from projive.core.events import Event, EventBus, EventType, get_event_bus
from projive.core.layout import StackedLayout, assemble_w, model_covariance

__all__ = [
    # Data
    "BlockRanks",
    "DiagonalNoise",
    "IsotropicNoise",
    "MultiBlockData",
    "NoiseModel",
    "ProjiveParams",
    # Layout
    "StackedLayout",
    "assemble_w",
    "model_covariance",
    # Errors
    "ProjiveError",
    # Events
    "Event",
    "EventBus",
    "EventType",
    "get_event_bus",
]
