"""metriclab: a desk-scale lab for learned text-evaluation metrics.

Trains small transformer regression models on (reference, candidate,
rating) triplets, compresses them by pseudo-label distillation over
synthetically perturbed corpora (including language-clustered 1-to-N
distillation), and measures segment/system-level correlation and inference
throughput.
"""

__version__ = "0.1.0"
