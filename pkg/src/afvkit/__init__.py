"""Anomaly feature vectors from latent-layer dumps.

Library + CLI for profiling a protected classifier's natural latent
distribution, extracting compact anomaly feature vectors, training a
second-stage attack-type classifier, and evaluating detection and
classification quality.
"""

__version__ = "0.1.0"
