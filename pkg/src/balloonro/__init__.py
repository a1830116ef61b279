"""Balloon-borne GNSS radio occultation processing.

Simulation (geometric-optics ray tracing), preprocessing of carrier-phase
observables, bending-angle retrieval and partial Abel inversion for a
receiver flying inside the atmosphere.
"""

__version__ = "0.1.0"
