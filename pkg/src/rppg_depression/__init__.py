"""Depression-score regression from facial rPPG traces."""

__version__ = "0.1.0"
