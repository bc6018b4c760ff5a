"""Resilient perception for autonomous vehicles.

Submodules: ``telemetry`` (traces, features, datasets), ``detection`` (anomaly
detectors and evaluation), ``integrity`` (digest baselines, scheduling, restore),
``coordinator`` (primary/fallback switchover), ``simulation`` (closed-loop
scenarios), ``threats`` (layered threat catalog) and ``cli``.
"""

__version__ = "0.1.0"
