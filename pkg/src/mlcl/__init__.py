"""Multi-label supervised contrastive learning with long-tail-aware losses."""

__version__ = "0.1.0"
