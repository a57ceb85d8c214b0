"""Drone-borne Wi-Fi search-and-rescue simulation toolkit.

Core pieces: lens design math and beam templates, the antenna manifold,
an amplitude-only 3D direction estimator, an RF link model, discrete-event
protocol models (beaconing AP, device auto-reconnect, snapshot
aggregation), a dual-phase search mission, and trace metrics. A FastAPI
service wraps the core; the CLI is a thin client of that service.
"""

__version__ = "0.1.0"
