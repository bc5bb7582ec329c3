"""Relaxed-lasso model building, cross-validated evaluation and pretrained tables."""
