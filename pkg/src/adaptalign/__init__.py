"""Cross-subject adapter alignment and representative-item selection."""

__version__ = "0.1.0"
