"""Desk-scale federated learning simulator for forgetting under streaming HAR data."""

__version__ = "0.1.0"

LABELS = ("Sitting", "Standing", "Walking", "Jogging", "Upstairs", "Downstairs")
NUM_CLASSES = len(LABELS)
