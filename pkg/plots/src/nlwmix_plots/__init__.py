"""Publication-style figures from nlwmix CSV artifacts."""

__version__ = "0.1.0"
