"""Tabular Bayesian reinforcement learning with epistemically guided rewards."""
