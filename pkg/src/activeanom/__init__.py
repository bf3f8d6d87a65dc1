"""Active anomaly detection: deep unsupervised scorers plus a feedback head
trained in a budgeted expert-in-the-loop loop."""

__version__ = "0.1.0"
