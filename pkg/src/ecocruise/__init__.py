"""Physics-model-free predictive cruise control workbench.

Pipeline: distance-gridded data handling, online past sampling,
anchor-based future speed synthesis, a dual-encoder sequence model, a
fuel-saving candidate optimizer, and a synthetic longitudinal truck
simulator for closed-loop evaluation.
"""

__version__ = "0.1.0"
