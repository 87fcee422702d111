#!/usr/bin/env python3
"""Rebuild the MovieLens-100k `ua.base` / `ua.test` split.

The raw `u.data` ratings (original file order) are taken from the example
dataset shipped inside the RecBole wheel on PyPI, and split with the same
rule as the `allbut.pl ua 1 10` step of the original distribution: the first
ten ratings of every user, in file order, go to the test set. Both files are
sorted by (user, item) like the originals.

Usage: python3 scripts/fetch_ml100k.py [out_dir]   (default: data/ml-100k)
"""

import glob
import os
import subprocess
import sys
import tempfile
import zipfile

INTER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main() -> None:
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "ml-100k")
    os.makedirs(out_dir, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "recbole==1.2.1", "-d", tmp],
            check=True,
        )
        wheel = glob.glob(os.path.join(tmp, "*.whl"))[0]
        lines = zipfile.ZipFile(wheel).read(INTER).decode().splitlines()[1:]

    seen = {}
    base, test = [], []
    for line in lines:
        user = int(line.split()[0])
        seen[user] = seen.get(user, 0) + 1
        (test if seen[user] <= 10 else base).append(line)

    def key(line):
        user, item = line.split()[:2]
        return int(user), int(item)

    for name, rows in (("ua.base", base), ("ua.test", test)):
        rows.sort(key=key)
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write("\n".join(rows) + "\n")
    print(f"wrote {len(base)} training and {len(test)} test ratings to {out_dir}")


if __name__ == "__main__":
    main()
