#!/usr/bin/env python3
from rlcbf.cli import run

if __name__ == "__main__":
    raise SystemExit(run())
