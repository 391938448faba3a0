"""Crop price forecasting over a geospatial market (mandi) graph.

Subpackages cover the full pipeline: raw CSV ingestion, sparse-series
curation, n-day snippet features, threshold graph construction, a small
hand-differentiated neural toolkit, the CNN+GraphSAGE price model,
evaluation metrics, and a synthetic-data harness.
"""

__version__ = "0.1.0"
