"""Toolkit for few-shot transfer of natural language explanations.

The package covers the full experiment loop: reconstructing the three task
datasets, compiling named training regimes into staged plans, running
grid-searched training through a pluggable text-to-text backend, scoring
predictions automatically, collecting gated human judgments over HTTP, and
aggregating those judgments into model reports with significance tests.
"""

__version__ = "0.1.0"
