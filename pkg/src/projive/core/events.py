"""Telemetry events for model fitting and simulation batches.

A small pub/sub bus lets callers observe long EM runs without threading
callbacks through every function. Events are informational only; the
numerical results never depend on who is listening. The CLI relays fit
events to the console log with `--verbose` (see `log_fit_events`).
"""

from __future__ import annotations

import logging
import threading
from collections import defaultdict, deque
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from datetime import UTC, datetime
from enum import Enum
from typing import Any

logger = logging.getLogger(__name__)


class EventType(str, Enum):
    """Event types emitted by projive."""

    FIT_START = "fit.start"
    FIT_ITERATION = "fit.iteration"
    FIT_CONVERGED = "fit.converged"
    FIT_MAX_ITERS = "fit.max_iters"
    VARIANCE_CLAMPED = "fit.variance_clamped"
    SIM_CELL_FAILED = "simulation.cell_failed"


def _key(event_type: EventType | str) -> str:
    return event_type.value if isinstance(event_type, EventType) else event_type


@dataclass
class Event:
    """A single telemetry event.

    Attributes:
        event_type: Type of event.
        timestamp: Wall-clock time of emission.
        source: Name of the emitting routine.
        data: Event payload.
        message: Human-readable description.
    """

    event_type: EventType | str
    timestamp: datetime = field(default_factory=lambda: datetime.now(UTC))
    source: str = "projive"
    data: dict[str, Any] = field(default_factory=dict)
    message: str = ""

    def __str__(self) -> str:
        """String representation of the event."""
        return f"[{self.timestamp.isoformat()}] {_key(self.event_type)} from {self.source}: {self.message}"

    def to_dict(self) -> dict[str, Any]:
        """Convert event to a JSON-friendly dictionary."""
        return {
            "event_type": _key(self.event_type),
            "timestamp": self.timestamp.isoformat(),
            "source": self.source,
            "data": self.data,
            "message": self.message,
        }


EventHandler = Callable[[Event], None]


class EventBus:
    """Publish/subscribe bus with bounded history.

    Subscription and emission are guarded by a lock so concurrent fits in
    threads can share the global bus. Handlers run on the emitting thread.
    """

    def __init__(self, *, max_history: int = 1000) -> None:
        """Initialize event bus.

        Args:
            max_history: Maximum number of events to keep in history.
        """
        self._handlers: dict[str, list[EventHandler]] = defaultdict(list)
        self._history: deque[Event] = deque(maxlen=max_history)
        self._lock = threading.Lock()

    def subscribe(self, event_type: EventType | str, handler: EventHandler) -> None:
        """Subscribe a handler to one event type ("*" for all)."""
        with self._lock:
            handlers = self._handlers[_key(event_type)]
            if handler not in handlers:
                handlers.append(handler)

    def subscribe_all(self, handler: EventHandler) -> None:
        """Subscribe a handler to every event."""
        self.subscribe("*", handler)

    def unsubscribe(self, event_type: EventType | str, handler: EventHandler) -> bool:
        """Remove a handler.

        Returns:
            True if the handler was subscribed.
        """
        with self._lock:
            handlers = self._handlers[_key(event_type)]
            if handler in handlers:
                handlers.remove(handler)
                return True
            return False

    def _invoke_handler(self, handler: EventHandler, event: Event, event_key: str) -> None:
        try:
            handler(event)
        except (KeyboardInterrupt, SystemExit):
            raise
        except Exception:
            handler_name = getattr(handler, "__name__", str(handler))
            logger.exception(
                "Event handler '%s' failed processing %s event from %s",
                handler_name,
                event_key,
                event.source,
            )

    def emit(self, event: Event) -> None:
        """Record an event and notify its subscribers.

        A failing handler is logged and skipped; it never interrupts the
        emitting computation.
        """
        event_key = _key(event.event_type)
        with self._lock:
            self._history.append(event)
            handlers = [*self._handlers[event_key], *self._handlers["*"]]
        for handler in handlers:
            self._invoke_handler(handler, event, event_key)

    def emit_simple(
        self,
        event_type: EventType | str,
        source: str,
        message: str = "",
        **data: Any,
    ) -> Event:
        """Build and emit an event in one call.

        Returns:
            The emitted event.
        """
        event = Event(event_type=event_type, source=source, message=message, data=data)
        self.emit(event)
        return event

    def _iter_history_filtered(
        self,
        event_type: EventType | str | None = None,
        source: str | None = None,
    ) -> Iterator[Event]:
        type_key = None if event_type is None else _key(event_type)
        with self._lock:
            snapshot = list(self._history)
        for event in snapshot:
            if type_key is not None and _key(event.event_type) != type_key:
                continue
            if source is not None and event.source != source:
                continue
            yield event

    def get_history(
        self,
        event_type: EventType | str | None = None,
        source: str | None = None,
        limit: int | None = None,
    ) -> list[Event]:
        """Events matching the filters, most recent last."""
        filtered = list(self._iter_history_filtered(event_type, source))
        if limit is not None:
            return filtered[-limit:]
        return filtered

    def clear(self) -> None:
        """Drop history and handlers."""
        with self._lock:
            self._history.clear()
            self._handlers.clear()


_global_bus: EventBus | None = None
_global_lock = threading.Lock()


def get_event_bus() -> EventBus:
    """Get the process-wide event bus, creating it on first use."""
    global _global_bus
    with _global_lock:
        if _global_bus is None:
            _global_bus = EventBus()
        return _global_bus


def reset_event_bus() -> None:
    """Discard the process-wide event bus. Primarily useful for testing."""
    global _global_bus
    with _global_lock:
        _global_bus = None


def emit_fit_iteration(
    source: str,
    iteration: int,
    loglik: float,
    rel_change: float,
    bus: EventBus | None = None,
) -> Event:
    """Emit one EM iteration record."""
    return (bus or get_event_bus()).emit_simple(
        EventType.FIT_ITERATION,
        source=source,
        message=f"iteration {iteration}: loglik={loglik:.6f}",
        iteration=iteration,
        loglik=loglik,
        rel_change=rel_change,
    )


#: Event types relayed by `log_fit_events`.
FIT_EVENTS = (
    EventType.FIT_START,
    EventType.FIT_ITERATION,
    EventType.FIT_CONVERGED,
    EventType.FIT_MAX_ITERS,
    EventType.VARIANCE_CLAMPED,
)


def log_event(event: Event) -> None:
    """Write one event to this module's logger; iterations go to DEBUG."""
    level = logging.DEBUG if _key(event.event_type) == EventType.FIT_ITERATION.value else logging.INFO
    logger.log(level, "%s: %s", event.source, event.message)


def log_fit_events(bus: EventBus | None = None) -> None:
    """Relay every fit.* event on the bus to the log.

    Subscribing twice is harmless. Fits in joblib worker processes publish on
    their own bus and are not relayed.
    """
    bus = bus or get_event_bus()
    for event_type in FIT_EVENTS:
        bus.subscribe(event_type, log_event)
