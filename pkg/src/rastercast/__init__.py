"""Per-cell flood probability maps from geotagged short messages."""

__version__ = "0.1.0"
