#!/usr/bin/env python3
"""Time tiling + content filtering of one large synthetic slide at several
worker counts and report speedups plus manifest digests.

Example:
    python scripts/benchmark_parallel_tiling.py --size 10000 --workers 1,2,4
"""

import argparse
import hashlib
import shutil
import sys
import tempfile
import time
from pathlib import Path

from clotpipe.config import RunConfig, SynthConfig
from clotpipe.pipeline import filter_run, synth_run, tile_run


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=10_000,
                        help="slide edge in px (default 10000)")
    parser.add_argument("--workers", default="1,2,4",
                        help="comma-separated worker counts to time")
    parser.add_argument("--blobs", type=int, default=40)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--keep", default=None,
                        help="directory to keep outputs in (default: temp)")
    args = parser.parse_args()

    base = Path(args.keep) if args.keep else Path(tempfile.mkdtemp())
    gen_cfg = RunConfig(
        output_dir=str(base / "gen"), seed=args.seed,
        synth=SynthConfig(slides_per_class=1, classes=("CE",),
                          slide_width=args.size, slide_height=args.size,
                          blob_count=args.blobs),
    )
    print(f"generating {args.size}x{args.size} slide ...")
    start = time.perf_counter()
    labels = synth_run(gen_cfg)
    print(f"generated in {time.perf_counter() - start:.1f} s")

    baseline = None
    for workers in (int(w) for w in args.workers.split(",")):
        out = base / f"w{workers}"
        if out.exists():
            shutil.rmtree(out)
        out.mkdir(parents=True)
        shutil.copy(labels, out / "labels.csv")
        shutil.copytree(base / "gen" / "slides", out / "slides")
        cfg = gen_cfg.replace(output_dir=str(out), workers=workers)
        start = time.perf_counter()
        manifest = tile_run(cfg, out / "labels.csv")
        filter_run(cfg, manifest)
        wall = time.perf_counter() - start
        digest = hashlib.sha256(Path(manifest).read_bytes()).hexdigest()[:12]
        if baseline is None:
            baseline = wall
        print(f"workers={workers}: {wall:6.2f} s  speedup {baseline / wall:4.2f}x"
              f"  manifest sha256 {digest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
