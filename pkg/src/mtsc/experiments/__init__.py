"""Datasets, metrics, baselines, SNR sweeps and the command-line surface."""
