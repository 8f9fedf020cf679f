"""Shared physical constants and unit helpers."""

# Propagation speed, m/s. The round engineering value keeps the advertised
# range-resolution identity (1 / 20 GHz -> 0.05 ns -> 1.5 cm) exact.
C0 = 3.0e8

# Default carrier for the narrowband tracer, Hz (band center of 290-310 GHz).
DEFAULT_FREQ_HZ = 300.0e9

# Paths weaker than this (dB relative to transmit) are dropped by the tracer.
DEFAULT_POWER_FLOOR_DB = -130.0


def db_to_lin(db):
    """Power dB -> linear ratio."""
    return 10.0 ** (db / 10.0)


def lin_to_db(lin):
    """Linear power ratio -> dB."""
    import numpy as np

    return 10.0 * np.log10(lin)
