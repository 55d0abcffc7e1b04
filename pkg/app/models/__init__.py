"""Backbone, planning gates, early-exit heads and checkpoints."""
