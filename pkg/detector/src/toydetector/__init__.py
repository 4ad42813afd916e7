"""toydetector: toy-scale set-prediction lane detector."""

__version__ = "0.1.0"
