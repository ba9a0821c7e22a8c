"""Utilities package: image I/O helpers and the synthetic corpus script."""
