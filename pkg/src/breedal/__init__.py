"""On-line surrogate training with loss-deviation steered simulation sampling."""

__version__ = "0.1.0"
