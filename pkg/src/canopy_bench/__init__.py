"""canopy-bench: dataset curation and model evaluation for canopy height
estimation from overhead imagery."""

__version__ = "0.1.0"
