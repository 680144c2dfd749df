"""Neonatal incubator monitoring and control platform.

Device-side simulation (plant, control, sensors), a channel/field
telemetry service with alerting and remote commands, and the CLI that
ties them together. The dashboard frontend lives outside this package
and talks to the service over HTTP only.
"""

__version__ = "0.1.0"
