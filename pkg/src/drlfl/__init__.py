"""Desk-scale simulator for DRL-assisted federated learning over a wireless uplink."""

__version__ = "0.1.0"
