#!/usr/bin/env python3
"""Fetch the public datasets used by the optional acceptance tests.

Writes canonical CSVs under data/:

  tecator.csv       fat + 100-channel absorbance curves (215 samples,
                    file order; tests split 172 train / 43 test)
  vowel.train.csv   speaker vowel data, 528 rows
  vowel.test.csv    speaker vowel data, 462 rows

The cow growth data cannot be fetched automatically; run with --cow for
instructions on producing data/cow.csv from R.
"""

import argparse
import sys
import urllib.request
from pathlib import Path

TECATOR_URL = "http://lib.stat.cmu.edu/datasets/tecator"
VOWEL_URLS = {
    "vowel.train": "https://hastie.su.domains/ElemStatLearn/datasets/vowel.train",
    "vowel.test": "https://hastie.su.domains/ElemStatLearn/datasets/vowel.test",
}

COW_HELP = """\
data/cow.csv holds the balanced growth experiment: 60 animals weighed 11
times each (660 rows), two treatment groups.  The data ships with the R
package jmcm as `cattle`; produce the CSV with:

  Rscript -e 'data(cattle, package = "jmcm");
              names(cattle) <- c("cow", "time", "treatment", "weight");
              write.csv(cattle[c("weight", "time", "cow", "treatment")],
                        "data/cow.csv", row.names = FALSE)'

Required header: weight,time,cow,treatment, with weight numeric, time numeric
(days 0..133), cow and treatment categorical labels.
"""


def download(url, timeout=60):
    print(f"fetching {url}")
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read().decode("utf-8", errors="replace")


def write_tecator(dest):
    """Parse the statlib stream: 240 samples x 125 values, of which the
    first 100 are absorbances and value 124 is fat; keep the standard
    215 samples."""
    text = download(TECATOR_URL)
    values = []
    for tok in text.split():
        try:
            values.append(float(tok))
        except ValueError:
            continue
    if len(values) < 240 * 125:
        raise SystemExit("tecator download looks truncated")
    data = values[-240 * 125:]
    grid = [850.0 + k * 200.0 / 99.0 for k in range(100)]
    header = "fat," + ",".join(f"absorp:{g:.4f}" for g in grid)
    lines = [header]
    for i in range(215):
        row = data[i * 125:(i + 1) * 125]
        absorp, fat = row[:100], row[123]
        lines.append(",".join([repr(fat)] + [repr(v) for v in absorp]))
    dest.write_text("\n".join(lines) + "\n")
    print(f"wrote {dest} (215 rows)")


def write_vowel(name, dest):
    """Re-shape the ESL csv (row index, class 1..11, 10 features)."""
    text = download(VOWEL_URLS[name])
    lines = [ln for ln in text.splitlines() if ln.strip()]
    out = ["cls," + ",".join(f"x:{k}" for k in range(1, 11))]
    for ln in lines[1:]:
        cells = ln.split(",")
        label = f"v{int(cells[1]):02d}"
        out.append(",".join([label] + cells[2:12]))
    dest.write_text("\n".join(out) + "\n")
    print(f"wrote {dest} ({len(out) - 1} rows)")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dest", default="data", help="output directory")
    ap.add_argument("--force", action="store_true", help="refetch existing files")
    ap.add_argument("--cow", action="store_true",
                    help="print instructions for data/cow.csv and exit")
    args = ap.parse_args(argv)

    if args.cow:
        print(COW_HELP)
        return 0

    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    jobs = [("tecator.csv", lambda p: write_tecator(p)),
            ("vowel.train.csv", lambda p: write_vowel("vowel.train", p)),
            ("vowel.test.csv", lambda p: write_vowel("vowel.test", p))]
    failures = 0
    for name, job in jobs:
        path = dest / name
        if path.exists() and not args.force:
            print(f"{path} already present (use --force to refetch)")
            continue
        try:
            job(path)
        except Exception as exc:
            failures += 1
            print(f"could not fetch {name}: {exc}", file=sys.stderr)
    if not (dest / "cow.csv").exists():
        print("\nnote: data/cow.csv is not fetched automatically; "
              "run scripts/fetch_data.py --cow for instructions")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
