"""canopy-trainer: fine-tune a height estimator on image/CHM pairs and
export predictions in the evaluation toolkit's formats."""

__version__ = "0.1.0"
