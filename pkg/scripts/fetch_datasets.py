#!/usr/bin/env python3
"""Download the reference time series into ``data/`` as two-column CSV files.

Each dataset is tried from a list of public URLs first. If none is
reachable, a locally installed package that ships the same series is used
(``pmdarima`` for airline passengers, ``statsmodels`` for Mauna Loa CO2).
Neither package is a kernelforge dependency.

Usage::

    python3 scripts/fetch_datasets.py [--out data] [--only airline,co2]
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
import urllib.request
from pathlib import Path

AIRLINE_URLS = [
    "https://raw.githubusercontent.com/jbrownlee/Datasets/master/airline-passengers.csv",
    "https://www.stat.auckland.ac.nz/~wild/data/Rdatasets/csv/datasets/AirPassengers.csv",
]
CO2_URLS = [
    "https://gml.noaa.gov/webdata/ccgg/trends/co2/co2_mm_mlo.csv",
]


def _get(url, timeout=20):
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read().decode("utf-8", errors="replace")


def _airline_from_text(text):
    rows = list(csv.reader(io.StringIO(text)))
    values = []
    for row in rows[1:]:
        if row and row[-1].strip():
            values.append(float(row[-1]))
    if len(values) != 144:
        raise ValueError(f"expected 144 monthly values, got {len(values)}")
    return values


def airline():
    for url in AIRLINE_URLS:
        try:
            return _airline_from_text(_get(url)), url
        except Exception as exc:  # network or format problem: try the next source
            print(f"  {url}: {exc}", file=sys.stderr)
    from pmdarima.datasets import load_airpassengers
    return [float(v) for v in load_airpassengers()], "pmdarima.datasets.load_airpassengers"


def co2():
    for url in CO2_URLS:
        try:
            text = _get(url)
            out = []
            for row in csv.reader(io.StringIO(text)):
                if not row or row[0].startswith("#") or not row[0].strip().isdigit():
                    continue
                t, value = float(row[2]), float(row[3])
                if value > 0:
                    out.append((t, value))
            if out:
                return out, url
        except Exception as exc:
            print(f"  {url}: {exc}", file=sys.stderr)
    import statsmodels.api as sm
    frame = sm.datasets.co2.load_pandas().data.interpolate()
    monthly = frame["co2"].resample("MS").mean().dropna()
    out = [(ts.year + (ts.month - 0.5) / 12.0, float(v)) for ts, v in monthly.items()]
    return out, "statsmodels.datasets.co2"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data"))
    parser.add_argument("--only", default="airline,co2")
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wanted = {s.strip() for s in args.only.split(",") if s.strip()}
    status = 0
    if "airline" in wanted:
        try:
            values, src = airline()
            path = out / "airline.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["year", "passengers"])
                for i, v in enumerate(values):
                    w.writerow([repr(1949 + i / 12.0), repr(v)])
            print(f"airline: {len(values)} rows from {src} -> {path}")
        except Exception as exc:
            print(f"airline: failed ({exc})", file=sys.stderr)
            status = 1
    if "co2" in wanted:
        try:
            rows, src = co2()
            path = out / "co2.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["year", "co2"])
                for t, v in rows:
                    w.writerow([repr(t), repr(v)])
            print(f"co2: {len(rows)} rows from {src} -> {path}")
        except Exception as exc:
            print(f"co2: failed ({exc})", file=sys.stderr)
            status = 1
    return status


if __name__ == "__main__":
    sys.exit(main())
