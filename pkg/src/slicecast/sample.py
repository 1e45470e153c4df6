"""Synthetic datasets: the bundled five-node archive and peaky seasonal frames."""

from __future__ import annotations

import gzip
import io
import math
import tarfile
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .numerics.rng import XorShift64Star
from .preprocess import SeriesFrame

SAMPLE_START = int(datetime(2004, 3, 1, tzinfo=timezone.utc).timestamp())
SAMPLE_DAYS = 60
SAMPLE_CADENCE = 300

SAMPLE_NETWORK = """\
?SNDlib native format; type: network; version: 1.0
# network sample5

# NODE SECTION
#
# <node_id> [(<longitude>, <latitude>)]

NODES (
  SEA ( -122.30 47.60 )
  DEN ( -105.00 40.75 )
  CHI ( -87.62 41.83 )
  NYC ( -73.97 40.78 )
  ATL ( -84.38 33.75 )
)

# LINK SECTION
#
# <link_id> ( <source> <target> ) <pre_installed_capacity> <pre_installed_capacity_cost> <routing_cost> <setup_cost> ( {<module_capacity> <module_cost>}* )

LINKS (
  L_SEA_DEN ( SEA DEN ) 1200.00 0.00 1.00 0.00 ( 2400.00 1.00 )
  L_DEN_CHI ( DEN CHI ) 1000.00 0.00 1.00 0.00 ( 2400.00 1.00 )
  L_CHI_NYC ( CHI NYC ) 1500.00 0.00 1.00 0.00 ( 2400.00 1.00 )
  L_NYC_ATL ( NYC ATL ) 1000.00 0.00 1.00 0.00 ( 2400.00 1.00 )
  L_ATL_DEN ( ATL DEN ) 600.00 0.00 2.00 0.00 ( 2400.00 1.00 )
  L_SEA_CHI ( SEA CHI ) 800.00 0.00 3.00 0.00 ( 2400.00 1.00 )
  L_CHI_ATL ( CHI ATL ) 900.00 0.00 1.00 0.00 ( 2400.00 1.00 )
)
"""

# (source, target, base level, weekly peak day, peak gain)
SAMPLE_DEMANDS = (
    ("SEA", "NYC", 260.0, 4, 1.9),
    ("NYC", "SEA", 180.0, 4, 1.6),
    ("DEN", "NYC", 140.0, 1, 1.5),
    ("SEA", "ATL", 40.0, 6, 1.4),
)


def _stamp(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y%m%d-%H%M")


def demand_document(values: dict[tuple[str, str], float], ts: int) -> str:
    lines = [
        "?SNDlib native format; type: demands; version: 1.0",
        "",
        "META (",
        "  granularity = 5min",
        f"  time = {_stamp(ts)}",
        "  unit = MBITPERSEC",
        ")",
        "",
        "DEMANDS (",
    ]
    for (s, t), v in values.items():
        lines.append(f"  {s}_{t} ( {s} {t} ) 1 {v:.6f} UNLIMITED")
    lines.append(")")
    return "\n".join(lines) + "\n"


def sample_snapshots(seed: int = 2004, days: int = SAMPLE_DAYS, drop_rate: float = 0.0005):
    """Yield ``(timestamp, document)`` for the bundled archive.

    Each demand follows a diurnal profile peaking in the evening, a weekly
    surge on one weekday, slow growth and multiplicative noise. A few pairs
    are dropped from random snapshots to exercise gap handling.
    """
    rng = XorShift64Star(seed)
    n = days * 86400 // SAMPLE_CADENCE
    for i in range(n):
        ts = SAMPLE_START + i * SAMPLE_CADENCE
        hour = (ts % 86400) / 3600.0
        dow = (ts // 86400 + 3) % 7  # 1970-01-01 was a Thursday
        day_index = i * SAMPLE_CADENCE / 86400.0
        values = {}
        for s, t, base, peak_day, gain in SAMPLE_DEMANDS:
            if rng.random() < drop_rate:
                continue
            diurnal = 0.55 + 0.45 * math.exp(-((hour - 20.0) ** 2) / 8.0)
            weekly = gain if dow == peak_day else 1.0
            growth = 1.0 + 0.004 * day_index
            noise = 1.0 + 0.08 * (rng.random() - 0.5)
            values[(s, t)] = base * diurnal * weekly * growth * noise
        yield ts, demand_document(values, ts)


def write_sample_archive(path: str | Path, seed: int = 2004, days: int = SAMPLE_DAYS) -> Path:
    """Write the snapshot archive as a byte-reproducible ``.tar.gz``."""
    path = Path(path)
    raw = io.BytesIO()
    with tarfile.open(fileobj=raw, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for ts, doc in sample_snapshots(seed, days):
            data = doc.encode()
            info = tarfile.TarInfo(f"demands/demandMatrix-sample5-5min-{_stamp(ts)}.txt")
            info.size = len(data)
            info.mtime = 0
            info.mode = 0o644
            info.uname = info.gname = ""
            tar.addfile(info, io.BytesIO(data))
    with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
        gz.write(raw.getvalue())
    return path


def bundled_paths() -> tuple[Path, Path]:
    """(network file, demand archive) shipped with the package."""
    base = resources.files("slicecast") / "data" / "sample5"
    return Path(str(base / "network.txt")), Path(str(base / "demands.tar.gz"))


def peaky_seasonal_frame(
    days: int,
    n_series: int = 2,
    seed: int = 7,
    cadence: int = SAMPLE_CADENCE,
    noise: float = 0.05,
) -> SeriesFrame:
    """Sub-daily traffic whose daily maxima repeat with a 7-day period.

    Every day has a modest diurnal bump; one weekday per series carries a
    sharp evening spike several times the usual level. Additive Gaussian
    noise is drawn from the seeded xorshift stream.
    """
    rng = XorShift64Star(seed)
    per_day = 86400 // cadence
    t = np.arange(days * per_day)
    hour = (t % per_day) * (24.0 / per_day)
    day = t // per_day
    cols = []
    for j in range(n_series):
        level = 100.0 * (1 + j)
        week_shape = np.array([1.0, 1.15, 1.05, 1.25, 1.1, 0.85, 0.8])
        week_shape = np.roll(week_shape, j)
        spike_day = (2 + 3 * j) % 7
        diurnal = 0.6 + 0.4 * np.exp(-((hour - 19.0) ** 2) / 6.0)
        spike = np.where(day % 7 == spike_day, 1.8 * np.exp(-((hour - 20.0) ** 2) / 2.0), 0.0)
        base = level * (week_shape[day % 7] * diurnal + spike)
        eps = rng.normal((day.size // per_day,))
        day_noise = np.repeat(eps, per_day)[: day.size]
        cols.append(np.maximum(base + noise * level * day_noise, 0.0))
    vals = np.stack(cols, axis=1)
    ts = SAMPLE_START + t * cadence
    return SeriesFrame(tuple(f"slice{j}" for j in range(n_series)), ts, vals)
