from __future__ import annotations

import logging
import logging.config

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


def configure_logging(level: str = "INFO") -> None:
    """Console logging on stderr; third-party loggers stay quiet."""
    logging.config.dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {
                "generic": {"format": LOG_FORMAT, "datefmt": "%H:%M:%S"},
            },
            "handlers": {
                "console": {
                    "class": "logging.StreamHandler",
                    "stream": "ext://sys.stderr",
                    "formatter": "generic",
                },
            },
            "loggers": {
                "macdm": {"level": level.upper(), "handlers": ["console"], "propagate": False},
                "sqlalchemy.engine": {"level": "WARNING"},
                "alembic": {"level": "INFO"},
            },
            "root": {"level": "WARNING", "handlers": ["console"]},
        }
    )
