"""Leafwise Brownian motion on suspension laminations over a genus-2 surface."""
