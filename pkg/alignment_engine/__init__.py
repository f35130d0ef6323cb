"""Numerical core: transport, assignment, semantics, objective, training and metrics."""
