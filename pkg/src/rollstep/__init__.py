"""rollstep: planning, whole-body control and simulation for a wheeled biped."""

__version__ = "0.1.0"
