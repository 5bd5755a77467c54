"""
Dev smoke script:
- Solves the homogeneous unit-cube problem on level 1 with UMG (random initial guess)
- Builds the cost-model predictions for levels 0..3
- Writes results to dev_smoke.json and dev_predict.json (in repo root)
No external services; takes a few seconds.
"""

from __future__ import annotations

import json
from pathlib import Path
import sys, os
sys.path.insert(0, os.path.abspath("."))

from src.bench import cmd_predict
from src.config import setup_logging
from src.mesh import refine_hierarchy, unit_cube_mesh
from src.models import BenchConfig, SolverConfig, SolverKind
from src.multigrid import StokesMultigrid
from src.solvers import run_solver


def main() -> int:
    setup_logging()
    root = Path(".")
    smoke_path = root / "dev_smoke.json"
    predict_path = root / "dev_predict.json"

    hierarchy = refine_hierarchy(unit_cube_mesh(), 1)
    mg = StokesMultigrid(hierarchy)
    cfg = SolverConfig.defaults(SolverKind.UMG, eps=1e-6)
    result, _ = run_solver(cfg, mg, mg.rhs(1))
    smoke_path.write_text(result.to_json(), encoding="utf-8")

    payload = cmd_predict(BenchConfig(levels=(0, 3)))
    predict_path.write_text(json.dumps(payload, indent=2), encoding="utf-8")

    print(f"UMG L1: {result.iterations} iterations, converged={result.converged} -> {smoke_path}")
    print(f"Predictions -> {predict_path}")
    return 0 if result.converged else 1


if __name__ == "__main__":
    raise SystemExit(main())
