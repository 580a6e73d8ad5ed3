"""Versioned blob storage over a shared, distributed segment tree."""

from .client import BlobHandle, Client, UpdateResult
from .deploy import Deployment

__all__ = ["BlobHandle", "Client", "Deployment", "UpdateResult"]
