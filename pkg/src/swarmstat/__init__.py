"""Competitive swarm optimization with mutated agents for statistical estimation and design."""

__version__ = "0.1.0"
