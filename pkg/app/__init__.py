# app package
__all__ = ["main", "cli", "services", "common"]
