"""Output-feedback controller and holding-device co-design for LTI plants with sporadic measurements."""

__version__ = "0.1.0"
