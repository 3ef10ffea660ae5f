"""catm_sim: TTI-resolution system simulator for LTE Cat-M (eMTC) devices."""

__version__ = "0.1.0"
