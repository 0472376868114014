"""Chronic shelter-use labelling, prediction and cohort evaluation."""

__version__ = "0.1.0"
