"""Decibel conversions used at the command-line boundary.

The solver core works in linear units (watts, linear SINR) only.
"""

from __future__ import annotations

import numpy as np

__all__ = ["db_to_linear", "linear_to_db", "dbm_to_watts", "watts_to_dbm"]


def db_to_linear(db):
    """``10 ** (db / 10)``; 10 dB -> 10.0."""
    return np.power(10.0, np.asarray(db, float) / 10.0)[()]


def linear_to_db(x):
    return (10.0 * np.log10(np.asarray(x, float)))[()]


def dbm_to_watts(dbm):
    """Power in dBm (relative to 1 mW) to watts; 40 dBm -> 10 W."""
    return db_to_linear(np.asarray(dbm, float) - 30.0)


def watts_to_dbm(w):
    return linear_to_db(w) + 30.0
