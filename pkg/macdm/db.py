from __future__ import annotations

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker


class Base(DeclarativeBase):
    """Base class for all ORM models."""
    pass


def make_engine(database_url: str, echo: bool = False) -> Engine:
    return create_engine(
        database_url,
        echo=echo,      # set True to see SQL logs while debugging
        future=True,
    )


def make_session_factory(engine: Engine) -> sessionmaker[Session]:
    return sessionmaker(
        autocommit=False,
        autoflush=False,
        bind=engine,
    )


def init_db(engine: Engine) -> None:
    """
    Create any missing registry tables.

    Alembic owns the schema for long-lived registries; this covers a fresh SQLite file.
    """
    import macdm.models  # noqa: F401  # populate Base.metadata

    Base.metadata.create_all(bind=engine)
