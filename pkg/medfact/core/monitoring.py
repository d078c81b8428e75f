"""Error reporting through Sentry, enabled by SENTRY_DSN."""

from __future__ import annotations

import logging
import os
from typing import Optional

from medfact import __version__


def init_sentry(command: Optional[str] = None) -> Optional[object]:
    """Start the Sentry SDK for one command run; returns None when SENTRY_DSN is unset.

    ERROR records become Sentry events and INFO records become breadcrumbs, so a failed stage
    arrives with the stage start/finish messages that preceded it.
    """

    dsn = os.getenv("SENTRY_DSN")
    if not dsn:
        return None

    try:
        import sentry_sdk
        from sentry_sdk.integrations.logging import LoggingIntegration
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("SENTRY_DSN is set but 'sentry-sdk' is not installed") from exc

    sentry_sdk.init(
        dsn=dsn,
        release=f"medfact@{__version__}",
        environment=os.getenv("SENTRY_ENV", "development"),
        traces_sample_rate=float(os.getenv("SENTRY_TRACES_SAMPLE_RATE", "0.0")),
        integrations=[LoggingIntegration(level=logging.INFO, event_level=logging.ERROR)],
        send_default_pii=False,
    )
    if command:
        sentry_sdk.set_tag("command", command)
    return sentry_sdk
