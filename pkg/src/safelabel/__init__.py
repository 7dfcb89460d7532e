"""Safety-oriented annotation of automated-driving datasets.

Perception-error labels from region-filtered ground truth, hazardous-event
labels from actor kinematics and safe gaps, and evaluation of introspector
predictions against those labels.
"""

__version__ = "0.1.0"
