"""Configuration, experiment orchestration and the command-line interface."""
