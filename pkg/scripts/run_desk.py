"""Run (or resume) every desk-scale member; finished runs are skipped."""
import argparse
import logging
import time

from lengthgen import desk


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--groups", nargs="*", default=None, help="subset of group names")
    ap.add_argument("--out", default=None, help="results root (default runs/desk)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name, cfg in desk.members(args.groups):
        t = time.time()
        rep = desk.run(cfg, args.out)
        print(f"{name} seed={cfg.seed} score={rep.score:.4f} ({time.time() - t:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
