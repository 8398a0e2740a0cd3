#!/usr/bin/env python3
"""
Entry point for the plane-sweep depth experiment harness.

Usage:
    python3 scripts/run_depth_sweep.py sweep --config config/default.cfg --out ./runs/default
    python3 scripts/run_depth_sweep.py ablate --config config/default.cfg --axis bins
"""

from __future__ import annotations

import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from src.services.harness_cli import main  # noqa: E402


if __name__ == "__main__":
    raise SystemExit(main())
