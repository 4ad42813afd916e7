"""laneforge: street-view driven lane-level road network synthesis."""

__version__ = "0.1.0"
