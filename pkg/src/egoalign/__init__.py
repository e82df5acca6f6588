"""Convert egocentric human demonstrations and humanoid teleoperation logs
into one 20 Hz episode format with an 18-dim action space."""

__version__ = "0.1.0"
