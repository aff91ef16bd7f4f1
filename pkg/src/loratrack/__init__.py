"""LoRa-based location and activity monitoring: device/link/energy models,
packet forwarder and ingest server, and a deterministic end-to-end simulator."""

__version__ = "0.1.0"
