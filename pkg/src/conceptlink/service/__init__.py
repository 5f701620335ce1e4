"""HTTP service wrapping the mapping pipeline."""

from .app import create_app
from .client import ServiceClient
from .jobs import JobManager
from .runner import EphemeralServer

__all__ = ["create_app", "ServiceClient", "JobManager", "EphemeralServer"]
