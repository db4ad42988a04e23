"""Edge resource provisioning for vehicle digital-twin synchronization."""

__version__ = "0.1.0"
