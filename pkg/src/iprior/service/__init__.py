"""HTTP face of the package: pydantic schemas and the FastAPI app."""

from .app import create_app

__all__ = ["create_app"]
