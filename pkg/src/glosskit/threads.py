"""Pin the BLAS/OpenMP thread count so floating-point reductions stay reproducible."""

from __future__ import annotations

import os

from threadpoolctl import threadpool_limits

from .errors import ConfigError

ENV_VAR = "GLOSSKIT_THREADS"
_active = None


def set_threads(n):
    """Limit every native thread pool numpy uses to ``n`` threads (process-wide)."""
    global _active
    n = int(n)
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    _active = threadpool_limits(limits=n)
    return n


def threads_from_env(default=None):
    """Apply ``GLOSSKIT_THREADS`` if set (else ``default``); returns the count applied or None."""
    raw = os.environ.get(ENV_VAR)
    if raw is None or raw == "":
        return None if default is None else set_threads(default)
    try:
        return set_threads(int(raw))
    except ValueError:
        raise ConfigError(f"{ENV_VAR} must be a positive integer, got {raw!r}") from None
