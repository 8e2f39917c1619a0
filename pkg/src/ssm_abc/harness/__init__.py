"""Experiment configuration, accuracy metrics, orchestration and the command line."""
