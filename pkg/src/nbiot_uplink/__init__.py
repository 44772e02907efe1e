"""NB-IoT uplink physical layer: transmitters, channel impairments,
receivers for NPRACH and NPUSCH formats 1/2, and a campaign harness."""

__version__ = "0.1.0"
