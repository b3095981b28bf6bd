"""Run every CLI command over a sampled omega ensemble and collect the summaries."""
import argparse
import os
import sys
import time

from lorenzrt.cli import main as cli_main

COMMANDS = ("check-map", "escape", "returns", "correlations", "tower")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="ensemble_out")
    ap.add_argument("--config", help="run configuration passed to every command")
    ap.add_argument("--ensemble", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip", nargs="*", default=[], choices=COMMANDS)
    args = ap.parse_args(argv)
    codes = {}
    for cmd in COMMANDS:
        if cmd in args.skip:
            continue
        argv_cmd = [cmd, "--out", os.path.join(args.out, cmd), "--seed", str(args.seed),
                    "--ensemble", str(args.ensemble)]
        if args.config:
            argv_cmd += ["--config", args.config]
        t0 = time.perf_counter()
        print(f"== {cmd}", flush=True)
        codes[cmd] = cli_main(argv_cmd)
        print(f"-- {cmd}: exit {codes[cmd]} in {time.perf_counter() - t0:.1f}s", flush=True)
    print(" ".join(f"{c}={v}" for c, v in codes.items()))
    return max(codes.values(), default=0)


if __name__ == "__main__":
    sys.exit(main())
