"""
Database configuration and session management
"""
from sqlalchemy.pool import StaticPool
from sqlmodel import Session, SQLModel, create_engine

from app.config import DATABASE_URL


def make_engine(url: str = DATABASE_URL):
    """SQLite engines share one connection when in memory"""
    if not url.startswith("sqlite"):
        return create_engine(url)
    if url in ("sqlite://", "sqlite:///:memory:"):
        return create_engine(url, connect_args={"check_same_thread": False}, poolclass=StaticPool)
    return create_engine(url, connect_args={"check_same_thread": False})


engine = make_engine(DATABASE_URL)


def init_db(bind=None):
    """Initialize database tables"""
    import app.models  # noqa: F401  registers the table models

    SQLModel.metadata.create_all(bind or engine)


def get_session():
    """Get database session"""
    with Session(engine) as session:
        yield session
