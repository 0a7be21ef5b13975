"""RieIF: knowledge-graph-constrained dual-stream recovery of masked
spatio-temporal graph signals, with the masking protocol, training
pipeline, baselines, metrics, and manifold diagnostics around it."""

__version__ = "0.1.0"
