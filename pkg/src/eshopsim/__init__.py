"""Desk-scale 5G NR mmWave handover simulator with learned early preparation.

The pipeline: simulate beam-level RSRP reports for mobile users, detect A3
handover events under HOM/TTT semantics, build countdown-labeled datasets,
train a temporal convolutional network to predict the remaining time to the
next A3 entry-criterion fulfillment, and compare early-scheduled handover
preparation against the legacy procedure.
"""

__version__ = "0.1.0"
