"""HeraldLight: queue-forecast guided traffic signal control on a grid microsimulator."""

__version__ = "0.1.0"
