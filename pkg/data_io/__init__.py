"""Token grids, synthetic data and on-disk formats."""
