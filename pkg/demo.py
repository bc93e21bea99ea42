"""
Walkthrough of the four seldyn commands on small instances.

    python demo.py [--out demo_out]

Writes the data files and JSON configs under <out>/configs, then runs
forward, analyze, gradcheck and train on them.
"""
import argparse
import json
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from seldyn import storage
from seldyn.cli import run
from seldyn.fixtures import kernel_with_spectrum, psd_symmetric_part_kernel, rank_one_instance
from seldyn.grid import make_grid
from seldyn.settings import configure_logging

load_dotenv()

N = 17


def write_config(path: Path, doc: dict) -> str:
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return str(path)


def build_configs(cfg_dir: Path) -> dict:
    """Data files plus one config per scenario. Returns {name: (command, config path)}."""
    cfg_dir.mkdir(parents=True, exist_ok=True)
    grid = make_grid(N)

    # --- Rank-one ReLU instances (closed form available) ---
    for branch in ("positive", "negative"):
        spec = rank_one_instance(grid, branch)
        storage.write_field(cfg_dir / f"phi_{branch}.csv", spec.phi, grid)
        storage.write_field(cfg_dir / f"psi_{branch}.csv", spec.psi, grid)
        print(f"📘 Rank-one {branch} branch: lambda_I = {spec.lambda_I(grid):+.4f}")

    # --- Kernels for the stability analysis ---
    sym, _ = kernel_with_spectrum(grid, [2.0, 1.0, 0.5], seed=0)
    storage.write_kernel(cfg_dir / "b_symmetric.csv", sym, grid)
    storage.write_kernel(cfg_dir / "b_psd_part.csv", psd_symmetric_part_kernel(grid, seed=1), grid)
    storage.write_field(cfg_dir / "f_initial.csv", np.sin(np.pi * grid.nodes), grid)

    base = {"grid": {"n": N}, "time": {"T": 1.0, "steps": 200}}
    scenarios = {
        "rank_one_positive": ("forward", {
            **base, "activation": "relu", "initial_field": {"constant": 0.1},
            "controls": {"b": {"rank_one": {"phi": {"path": "phi_positive.csv"},
                                            "psi": {"path": "psi_positive.csv"}, "a0": 1.0}}},
        }),
        "rank_one_negative": ("forward", {
            **base, "activation": "relu", "initial_field": {"constant": 0.0},
            "controls": {"b": {"rank_one": {"phi": {"path": "phi_negative.csv"},
                                            "psi": {"path": "psi_negative.csv"}, "a0": -1.0}}},
        }),
        "lyapunov_psd": ("forward", {
            **base, "time": {"T": 4.0, "steps": 400}, "activation": "tanh",
            "initial_field": {"path": "f_initial.csv"},
            "controls": {"a": {"constant": 0.2}, "b": {"path": "b_psd_part.csv"}},
        }),
        "spectrum_symmetric": ("analyze", {
            **base, "activation": "tanh", "initial_field": {"constant": 0.0},
            "controls": {"a": {"constant": 0.0}, "b": {"path": "b_symmetric.csv"}},
        }),
        "gradcheck_tracking": ("gradcheck", {
            **base, "grid": {"n": 8}, "time": {"T": 1.0, "steps": 16}, "activation": "tanh",
            "initial_field": {"path": "f_initial_8.csv"},
            "controls": {"a": {"constant": 0.1}, "b": {"constant": 0.2}},
            "loss": {"kind": "tracking", "target": {"constant": 1.0}, "lambda": 0.01},
        }),
        "train_ppa": ("train", {
            **base, "grid": {"n": 8}, "time": {"T": 1.0, "steps": 16}, "activation": "tanh",
            "initial_field": {"path": "f_initial_8.csv"},
            "controls": {"a": {"constant": 0.0}, "b": {"constant": 0.0}},
            "loss": {"kind": "tracking", "target": {"constant": 0.5}},
            "train": {"algo": "ppa", "tau": 1.0, "inner_iters": 10, "max_iters": 60, "tol": 1e-8},
        }),
        "train_pmp": ("train", {
            **base, "grid": {"n": 8}, "time": {"T": 0.5, "steps": 40}, "activation": "tanh",
            "initial_field": {"constant": 0.5},
            "controls": {"a": {"constant": 0.0}, "b": {"constant": 0.0}},
            "loss": {"kind": "tracking", "target": {"constant": 10.0}},
            "train": {"algo": "pmp", "box": {}, "damping": 0.5, "max_iters": 200, "tol": 1e-10},
        }),
    }
    small = make_grid(8)
    storage.write_field(cfg_dir / "f_initial_8.csv", np.sin(np.pi * small.nodes), small)

    return {name: (command, write_config(cfg_dir / f"{name}.json", doc)) for name, (command, doc) in scenarios.items()}


def main() -> None:
    parser = argparse.ArgumentParser(description="seldyn walkthrough")
    parser.add_argument("--out", default="demo_out")
    args = parser.parse_args()
    configure_logging()

    out = Path(args.out)
    scenarios = build_configs(out / "configs")
    print(f"✅ Wrote {len(scenarios)} configs to {out / 'configs'}")

    codes = {}
    for name, (command, config_path) in scenarios.items():
        print(f"\n🚀 {command}: {name}")
        codes[name] = run(command, config_path, str(out / name))
        report = json.loads((out / name / "report.json").read_text())
        if report.get("forward") and report["forward"].get("closed_form_error") is not None:
            print(f"📊 closed-form L2 error at T: {report['forward']['closed_form_error']:.3e}")
        if report.get("analyze"):
            print(f"📊 spectral verdict: {report['analyze']['spectral']['verdict']}")
        if report.get("gradcheck"):
            print(f"📊 gradient check max relative error: {report['gradcheck']['max_rel_error']:.3e}")
        if report.get("train"):
            print(f"📊 {report['train']['algo']}: final loss {report['train']['final_loss']:.3e} "
                  f"after {report['train']['iterations']} iterations")

    failed = [name for name, code in codes.items() if code != 0]
    if failed:
        print(f"\n⚠️ Non-zero exit for: {', '.join(failed)}")
    else:
        print(f"\n🎉 All {len(codes)} scenarios finished")


if __name__ == "__main__":
    main()
