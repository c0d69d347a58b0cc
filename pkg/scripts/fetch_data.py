#!/usr/bin/env python3
"""Fetch and convert the two benchmark datasets to CSV under data/.

    python scripts/fetch_data.py [--dest data/]

Produces:
    data/california_housing.csv  20640 rows; med_inc .. longitude, med_house_value
    data/ccpp.csv                 9568 rows; at, v, ap, rh, pe

California Housing arrives as the classic Pace & Barry block-group file and
is converted to the standard benchmark feature set (per-household averages
derived from the block totals). CCPP arrives as an xlsx workbook; the first
sheet is parsed with the standard library so no spreadsheet package is
needed. SHA-256 checksums of the produced CSVs are recorded on first fetch
(data/CHECKSUMS.txt) and verified on later runs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import os
import re
import sys
import tarfile
import urllib.request
import xml.etree.ElementTree as ET
import zipfile

CAL_HOUSING_URL = "https://ndownloader.figshare.com/files/5976036"
CCPP_URL = "https://archive.ics.uci.edu/static/public/294/combined+cycle+power+plant.zip"

CAL_ROWS = 20640  # row count of the distributed file
CCPP_ROWS = 9568


def download(url: str) -> bytes:
    print(f"downloading {url}")
    with urllib.request.urlopen(url) as resp:
        return resp.read()


def convert_cal_housing(tgz_bytes: bytes, out_path: str) -> int:
    """cal_housing.tgz -> benchmark CSV with derived per-household averages."""
    with tarfile.open(fileobj=io.BytesIO(tgz_bytes), mode="r:gz") as tar:
        member = next(m for m in tar.getmembers() if m.name.endswith("cal_housing.data"))
        raw = tar.extractfile(member).read().decode("ascii")
    rows = []
    for line in raw.strip().splitlines():
        (longitude, latitude, age, total_rooms, total_bedrooms,
         population, households, med_inc, value) = (float(v) for v in line.split(","))
        rows.append([
            med_inc,
            age,
            total_rooms / households,
            total_bedrooms / households,
            population,
            population / households,
            latitude,
            longitude,
            value,
        ])
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["med_inc", "house_age", "ave_rooms", "ave_bedrms",
                         "population", "ave_occup", "latitude", "longitude",
                         "med_house_value"])
        for row in rows:
            writer.writerow([repr(v) for v in row])
    return len(rows)


def _xlsx_shared_strings(zf: zipfile.ZipFile) -> list[str]:
    try:
        data = zf.read("xl/sharedStrings.xml")
    except KeyError:
        return []
    strings = []
    for si in ET.fromstring(data):
        strings.append("".join(t.text or "" for t in si.iter() if t.tag.endswith("}t")))
    return strings


_CELL_REF = re.compile(r"([A-Z]+)(\d+)")


def _column_index(ref: str) -> int:
    match = _CELL_REF.match(ref)
    idx = 0
    for ch in match.group(1):
        idx = idx * 26 + (ord(ch) - ord("A") + 1)
    return idx - 1


def read_xlsx_sheet(xlsx_bytes: bytes, sheet: str = "xl/worksheets/sheet1.xml") -> list[list]:
    """Rows of the given worksheet as python values (stdlib-only parser)."""
    with zipfile.ZipFile(io.BytesIO(xlsx_bytes)) as zf:
        shared = _xlsx_shared_strings(zf)
        root = ET.fromstring(zf.read(sheet))
    rows = []
    for row_el in root.iter():
        if not row_el.tag.endswith("}row"):
            continue
        cells: dict[int, object] = {}
        for cell in row_el:
            if not cell.tag.endswith("}c"):
                continue
            ref = cell.get("r")
            col = _column_index(ref) if ref else len(cells)
            ctype = cell.get("t", "n")
            value = None
            for child in cell:
                if child.tag.endswith("}v"):
                    value = child.text
                elif child.tag.endswith("}is"):
                    value = "".join(t.text or "" for t in child.iter() if t.tag.endswith("}t"))
            if value is None:
                continue
            if ctype == "s":
                cells[col] = shared[int(value)]
            elif ctype in ("str", "inlineStr"):
                cells[col] = value
            else:
                cells[col] = float(value)
        if cells:
            width = max(cells) + 1
            rows.append([cells.get(i) for i in range(width)])
    return rows


def convert_ccpp(zip_bytes: bytes, out_path: str) -> int:
    """UCI CCPP zip -> CSV of the first fold sheet (AT, V, AP, RH -> PE)."""
    with zipfile.ZipFile(io.BytesIO(zip_bytes)) as zf:
        xlsx_name = next(n for n in zf.namelist() if n.lower().endswith(".xlsx"))
        xlsx_bytes = zf.read(xlsx_name)
    rows = read_xlsx_sheet(xlsx_bytes)
    header = [str(v).strip().lower() for v in rows[0]]
    if header != ["at", "v", "ap", "rh", "pe"]:
        raise SystemExit(f"unexpected CCPP header: {header}")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows[1:]:
            writer.writerow([repr(float(v)) for v in row])
    return len(rows) - 1


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def record_checksum(dest: str, filename: str) -> None:
    """Trust-on-first-use: record the checksum, verify when already recorded."""
    ledger = os.path.join(dest, "CHECKSUMS.txt")
    digest = _sha256(os.path.join(dest, filename))
    known = {}
    if os.path.exists(ledger):
        with open(ledger, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d, name = line.split(None, 1)
                    known[name.strip()] = d
    if filename in known:
        if known[filename] != digest:
            raise SystemExit(f"{filename}: checksum mismatch against {ledger} — "
                             "delete the stale file or the ledger entry to refetch")
        print(f"{filename}: checksum verified")
    else:
        known[filename] = digest
        with open(ledger, "w", encoding="utf-8") as fh:
            for name in sorted(known):
                fh.write(f"{known[name]}  {name}\n")
        print(f"{filename}: checksum recorded")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--dest", default="data", help="output directory (default data/)")
    parser.add_argument("--only", choices=["california_housing", "ccpp"],
                        help="fetch a single dataset")
    args = parser.parse_args(argv)
    os.makedirs(args.dest, exist_ok=True)

    jobs = []
    if args.only in (None, "california_housing"):
        jobs.append(("california_housing.csv", CAL_HOUSING_URL, convert_cal_housing, CAL_ROWS))
    if args.only in (None, "ccpp"):
        jobs.append(("ccpp.csv", CCPP_URL, convert_ccpp, CCPP_ROWS))

    for filename, url, convert, expected_rows in jobs:
        out_path = os.path.join(args.dest, filename)
        if os.path.exists(out_path):
            print(f"{out_path} already present, skipping download")
        else:
            payload = download(url)
            n = convert(payload, out_path)
            if n != expected_rows:
                os.remove(out_path)
                raise SystemExit(f"{filename}: got {n} rows, expected {expected_rows}")
            print(f"{out_path}: {n} rows written")
        record_checksum(args.dest, filename)
    return 0


if __name__ == "__main__":
    sys.exit(main())
