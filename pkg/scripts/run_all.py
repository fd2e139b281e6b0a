"""Run every config in configs/ through the CLI and print one status line each."""
import argparse
import sys
import time
from pathlib import Path

from fbdsde.cli import run

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    worst = 0
    for path in sorted((ROOT / "configs").glob("*.toml")):
        raw = tomllib.loads(path.read_text())
        if "command" not in raw:  # section include, not an experiment
            continue
        t0 = time.perf_counter()
        code = run(raw["command"], str(path), args.seed, str(Path(args.out) / path.stem), quiet=True)
        print(f"{path.stem:20s} exit={code} {time.perf_counter() - t0:6.1f}s")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
