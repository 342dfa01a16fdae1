"""Reference HTTP service for the completion/VQA/caption/embedding protocol."""

from .app import create_app
from .config import ShimConfig
from .fixtures import FixtureBackend

__version__ = "0.1.0"

__all__ = ["ShimConfig", "create_app", "FixtureBackend"]
