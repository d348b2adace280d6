"""Desk-scale simulator for mixed CAV/HDV traffic served by ISAC roadside units."""

__version__ = "0.1.0"
