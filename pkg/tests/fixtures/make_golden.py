"""Regenerate the golden wire payloads with plain struct packing."""

import struct
from pathlib import Path

HERE = Path(__file__).parent


def pack(agent, frame, ts_us, flags, records, embed_dim=0):
    out = struct.pack("<4sBBIQQHH", b"RPF1", 1, flags, agent, frame, ts_us, len(records), embed_dim)
    out += b"\x00\x00"
    for rec in records:
        out += struct.pack(f"<{len(rec)}f", *rec)
    return out


GOLDEN = {
    "empty_p": pack(3, 0, 0, 0b0000, []),
    "two_pvs": pack(1, 42, 8_400_000, 0b0011, [
        (1.0, 2.0, 0.5, 3.0, -1.0, 4.5, 1.8, 1.5),
        (-10.25, 7.5, 0.0, 0.0, 0.0, 0.8, 0.8, 1.7),
    ]),
    "one_ps_conf": pack(2, 7, 1_400_000, 0b0110, [(5.0, -5.0, 1.0, 4.0, 2.0, 1.5, 0.75)]),
    "query_d4": pack(9, 3, 600_000, 0b1100, [
        (0.5, 0.25, 0.0, 0.9, 1.0, -1.0, 0.5, 0.0),
        (12.0, -3.0, 1.0, 0.6, 0.0, 0.0, 2.0, -2.5),
    ], embed_dim=4),
}

if __name__ == "__main__":
    for name, data in GOLDEN.items():
        (HERE / f"{name}.hex").write_text(data.hex() + "\n")
