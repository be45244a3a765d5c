"""Design optimization for a tendon-driven hand with CEM and a learned reward model."""

__version__ = "0.1.0"
