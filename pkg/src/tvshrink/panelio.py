"""Serialization of simulated return panels.

Binary layout (little-endian), documented for external consumers:

    bytes 0..7    magic b"TVSHPNL1"
    bytes 8..11   uint32 format version (1)
    bytes 12..19  uint64 p (rows)
    bytes 20..27  uint64 n (columns)
    bytes 28..35  uint64 seed used for the simulation
    bytes 36..39  uint32 flags (bit 0: paired i.i.d. panel present)
    then          p*n float64 returns in column-major order
    then          p*n float64 paired i.i.d. returns (if flagged)

The CSV form writes one column per time step for debugging.
"""

from __future__ import annotations

import struct

import numpy as np

from .bekk import ReturnsPanel

__all__ = ["write_panel", "read_panel", "write_panel_csv"]

_MAGIC = b"TVSHPNL1"
_VERSION = 1


def write_panel(path, panel: ReturnsPanel) -> None:
    flags = 1 if panel.paired_iid is not None else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQQI", _VERSION, panel.p, panel.n, panel.seed % 2**64, flags))
        fh.write(np.asfortranarray(panel.returns).tobytes(order="F"))
        if panel.paired_iid is not None:
            fh.write(np.asfortranarray(panel.paired_iid).tobytes(order="F"))


def read_panel(path) -> ReturnsPanel:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"not a panel file (magic {magic!r})")
        version, p, n, seed, flags = struct.unpack("<IQQQI", fh.read(32))
        if version != _VERSION:
            raise ValueError(f"unsupported panel format version {version}")
        count = p * n
        returns = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape((p, n), order="F")
        paired = None
        if flags & 1:
            paired = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape((p, n), order="F")
    return ReturnsPanel(returns=returns.copy(), seed=int(seed), paired_iid=None if paired is None else paired.copy())


def write_panel_csv(path, panel: ReturnsPanel) -> None:
    header = ",".join(f"t{j + 1}" for j in range(panel.n))
    np.savetxt(path, panel.returns, delimiter=",", header=header, comments="", fmt="%.17g")
