"""Deterministic stand-in for a DWD daily climate (KL) product file."""

from __future__ import annotations

from datetime import date, timedelta

import numpy as np

HEADER = ("STATIONS_ID;MESS_DATUM;QN_3;  FX;  FM;QN_4; RSK;RSKF; SDK;SHK_TAG;  NM; VPM;"
          "  PM; TMK; UPM; TXK; TNK; TGK;eor")


def write_kl_file(path, first: date, last: date, missing: int, seed: int = 0,
                  station: int = 2667) -> None:
    """Write one row per day; ``missing`` in-window rows carry a -999 sentinel.

    Rows before 2000-01-01 are also emitted, some with sentinels, to exercise
    the ingestion window.
    """
    rng = np.random.default_rng(seed)
    days = [first + timedelta(d) for d in range((last - first).days + 1)]
    window = [k for k, d in enumerate(days) if d >= date(2000, 1, 1)]
    bad = set(rng.choice(window, size=missing, replace=False).tolist())
    early = [k for k, d in enumerate(days) if d < date(2000, 1, 1)]
    if early:
        bad |= set(rng.choice(early, size=min(3, len(early)), replace=False).tolist())
    cols = ["RSK", "SDK", "PM", "TMK", "UPM", "TXK", "TNK"]
    lines = [HEADER]
    for k, d in enumerate(days):
        rsk = round(float(rng.exponential(2.5)) * (rng.random() < 0.6), 1)
        sdk = round(float(rng.uniform(0, 12)), 3)
        vals = {"RSK": rsk, "SDK": sdk, "PM": round(float(rng.normal(700, 8)), 1),
                "TMK": round(float(rng.normal(-4, 6)), 1), "UPM": round(float(rng.uniform(40, 100)), 2),
                "TXK": 0.0, "TNK": 0.0}
        vals["TXK"] = round(vals["TMK"] + 3.0, 1)
        vals["TNK"] = round(vals["TMK"] - 3.0, 1)
        if k in bad:
            vals[cols[k % len(cols)]] = -999
        lines.append(
            f"{station:11d};{d:%Y%m%d};   10;  -999;  -999;    3;{vals['RSK']:6};   6;{vals['SDK']:6};   0;"
            f"  -999;  -999;{vals['PM']:7};{vals['TMK']:5};{vals['UPM']:7};{vals['TXK']:5};"
            f"{vals['TNK']:5};  -999;eor")
    with open(path, "w", encoding="latin-1", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
