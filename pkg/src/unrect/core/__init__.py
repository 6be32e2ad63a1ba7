"""Core services layer for unrect.

The CLI consumes the library through :class:`UnrectServices`; result records
live in :mod:`unrect.core.models` and are shared with the library modules, so
the facade is imported lazily.
"""

from typing import Any

__all__ = [
    "UnrectServices",
    "get_services",
]


def __getattr__(name: str) -> Any:
    if name in __all__:
        from unrect.core import services

        return getattr(services, name)
    raise AttributeError(f"module 'unrect.core' has no attribute {name!r}")
