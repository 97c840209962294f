"""THETA-style multi-view hand teleoperation pipeline, desk scale."""

__version__ = "0.1.0"
