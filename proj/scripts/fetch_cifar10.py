#!/usr/bin/env python3
"""Download the CIFAR-10 binary batches into the accentkit cache.

The tool reads ``$ACCENTKIT_CACHE/cifar-10-batches-bin`` (default
``~/.cache/accentkit``) and falls back to the procedural shapes set when the
batches are absent.
"""

import argparse
import hashlib
import os
import sys
import tarfile
import tempfile
import urllib.request
from pathlib import Path

URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
MD5 = "c32a1d4ab5d03f1284b67883e8d87530"
BATCHES = [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin", "batches.meta.txt"]


def cache_root() -> Path:
    env = os.environ.get("ACCENTKIT_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "accentkit"


def digest(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dest", type=Path, default=cache_root(), help="cache root (default: %(default)s)")
    parser.add_argument("--archive", type=Path, help="use an already downloaded archive")
    parser.add_argument("--url", default=URL)
    args = parser.parse_args()

    target = args.dest / "cifar-10-batches-bin"
    if all((target / name).exists() for name in BATCHES):
        print(f"already present: {target}")
        return 0

    with tempfile.TemporaryDirectory() as tmp:
        archive = args.archive
        if archive is None:
            archive = Path(tmp) / "cifar-10-binary.tar.gz"
            print(f"downloading {args.url}")
            try:
                urllib.request.urlretrieve(args.url, archive)
            except OSError as exc:
                print(f"download failed: {exc}", file=sys.stderr)
                return 1
        got = digest(archive)
        if got != MD5:
            print(f"checksum mismatch: expected md5 {MD5}, got {got}", file=sys.stderr)
            return 1
        args.dest.mkdir(parents=True, exist_ok=True)
        with tarfile.open(archive, "r:gz") as tar:
            members = [m for m in tar.getmembers() if m.name.startswith("cifar-10-batches-bin/") and m.isfile()]
            tar.extractall(args.dest, members=members)

    missing = [name for name in BATCHES if not (target / name).exists()]
    if missing:
        print(f"archive lacks {', '.join(missing)}", file=sys.stderr)
        return 1
    print(f"installed {target}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
