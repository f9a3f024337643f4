"""rlcbf package."""

__all__ = ["cli"]
