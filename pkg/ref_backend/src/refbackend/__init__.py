"""Reference HTTP backend: a real seq2seq model behind the infill protocol."""

from .service import (
    DEFAULT_SENTINEL_MAP,
    MASK_TOKEN,
    STOP_TOKEN,
    BackendConfig,
    ModelRuntime,
    create_app,
)

__all__ = [
    "DEFAULT_SENTINEL_MAP",
    "MASK_TOKEN",
    "STOP_TOKEN",
    "BackendConfig",
    "ModelRuntime",
    "create_app",
]
