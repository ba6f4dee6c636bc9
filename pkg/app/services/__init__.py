"""Numerical services: autodiff core, gated attention model, training, paged cache and analysis."""
