"""Light field EPI depth estimation, surface fusion and evaluation."""

__version__ = "0.1.0"
