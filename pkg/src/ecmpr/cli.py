"""Command-line frontend: scene generation, registration, and experiments.

Exit codes: 0 success, 1 usage/config error, 2 registration failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgio
from .config import pose_to_dict
from .errors import ConfigError, RegistrationError
from .harness import (
    compute_metrics,
    run_comparison,
    run_rotation_sweep,
    table_scene_spec,
    write_comparison_report,
    write_sweep_report,
)
from .registration import RegistrationConfig, register
from .synthdata import generate_scene, read_points_csv, save_scene


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    parser = _Parser(prog="ecmpr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic scene")
    gen.add_argument("--config", help="scene spec JSON (defaults to the "
                     "14-point benchmark scene)")
    gen.add_argument("--out-dir", default="out", help="output directory")
    gen.add_argument("--stem", default="scene", help="output file stem")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--noise-sigma", type=float)

    reg = sub.add_parser("register", help="register model points to observations")
    reg.add_argument("--model", required=True, help="model points CSV (x,y,z)")
    reg.add_argument("--observations", required=True,
                     help="observations CSV (u,v)")
    reg.add_argument("--config", help="registration config JSON")
    reg.add_argument("--out", default="result.json", help="result JSON path")
    reg.add_argument("--solver", choices=["traversal", "lse"])
    reg.add_argument("--covariance", choices=["iso", "aniso"])

    cmp_ = sub.add_parser("compare", help="run the 4-row solver comparison")
    cmp_.add_argument("--config", help="comparison config JSON")
    cmp_.add_argument("--out-dir", default="out")
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--noise-sigma", type=float)
    cmp_.add_argument("--covariance", choices=["iso", "aniso"])

    swp = sub.add_parser("sweep", help="run the rotation-angle sweep")
    swp.add_argument("--config", help="sweep config JSON")
    swp.add_argument("--out-dir", default="out")
    swp.add_argument("--seed", type=int)
    swp.add_argument("--noise-sigma", type=float)
    swp.add_argument("--solver", choices=["traversal", "lse"])
    swp.add_argument("--covariance", choices=["iso", "aniso"])
    return parser


_COV_NAMES = {"iso": "isotropic", "aniso": "anisotropic"}


def _load_scene_spec(path, seed=None, noise_sigma=None):
    if path is None:
        spec = table_scene_spec()
    else:
        spec = cfgio.scene_from_dict(cfgio.load_json(path))
    if seed is not None:
        spec = replace(spec, seed=seed)
    if noise_sigma is not None:
        spec = replace(spec, noise_sigma=noise_sigma)
    return spec


def _load_experiment_config(path):
    """Shared compare/sweep config: scene + registration + runner fields."""
    if path is None:
        return {}
    doc = cfgio.load_json(path)
    allowed = {"scene", "registration", "seed", "noise_sigma", "angles_deg",
               "trials"}
    cfgio._check_keys(doc, allowed, "experiment config")
    return doc


def _cmd_generate(args):
    spec = _load_scene_spec(args.config, args.seed, args.noise_sigma)
    scene = generate_scene(spec)
    paths = save_scene(scene, args.out_dir, args.stem)
    print("\n".join(str(p) for p in paths))
    return 0


def _cmd_register(args):
    for path in (args.model, args.observations):
        if not Path(path).exists():
            raise ConfigError(f"input file not found: {path}")
    model = read_points_csv(args.model, ("x", "y", "z"))
    observations = read_points_csv(args.observations, ("u", "v"))

    if args.config is not None:
        reg_cfg = cfgio.registration_from_dict(cfgio.load_json(args.config))
    else:
        reg_cfg = RegistrationConfig()
    if args.solver is not None:
        reg_cfg = replace(reg_cfg, solver=args.solver)
    if args.covariance is not None:
        reg_cfg = replace(reg_cfg, covariance_mode=_COV_NAMES[args.covariance])

    result = register(model, observations, reg_cfg)
    doc = {
        "pose": pose_to_dict(result.pose),
        "converged": result.converged,
        "iterations_used": result.iterations_used,
        "assignments": result.assignments.tolist(),
        "convergence_residual": (result.trace[-1].rotation_change_sq
                                 if result.trace else None),
        "objective": (result.trace[-1].objective_after
                      if result.trace else None),
    }
    Path(args.out).write_text(json.dumps(doc, indent=2))
    print(args.out)
    return 0


def _cmd_compare(args):
    doc = _load_experiment_config(args.config)
    spec = _scene_from_doc(doc, args.seed, args.noise_sigma)
    reg_cfg = _registration_from_doc(doc)
    if args.covariance is not None:
        reg_cfg = replace(reg_cfg, covariance_mode=_COV_NAMES[args.covariance])
    sigma = args.noise_sigma if args.noise_sigma is not None \
        else doc.get("noise_sigma", 1.0)
    rows = run_comparison(spec, reg_cfg, noise_sigma=sigma)
    paths = write_comparison_report(rows, args.out_dir)
    print("\n".join(str(p) for p in paths))
    return 2 if any(r["failed"] for r in rows) else 0


def _cmd_sweep(args):
    doc = _load_experiment_config(args.config)
    sigma = args.noise_sigma if args.noise_sigma is not None \
        else doc.get("noise_sigma", 1.0)
    spec = _scene_from_doc(doc, args.seed, sigma)
    reg_cfg = _registration_from_doc(doc, default_solver="traversal")
    if args.solver is not None:
        reg_cfg = replace(reg_cfg, solver=args.solver)
    if args.covariance is not None:
        reg_cfg = replace(reg_cfg, covariance_mode=_COV_NAMES[args.covariance])
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    records, summary = run_rotation_sweep(
        spec, reg_cfg,
        angles_deg=doc.get("angles_deg"),
        trials=doc.get("trials", 4),
        master_seed=seed,
    )
    paths = write_sweep_report(records, summary, args.out_dir)
    print("\n".join(str(p) for p in paths))
    return 2 if any(r["failed"] for r in records) else 0


def _scene_from_doc(doc, seed, noise_sigma):
    if "scene" in doc:
        spec = cfgio.scene_from_dict(doc["scene"])
    else:
        spec = table_scene_spec()
    if seed is None:
        seed = doc.get("seed")
    if seed is not None:
        spec = replace(spec, seed=seed)
    if noise_sigma is not None:
        spec = replace(spec, noise_sigma=noise_sigma)
    return spec


def _registration_from_doc(doc, default_solver="lse"):
    if "registration" in doc:
        return cfgio.registration_from_dict(doc["registration"])
    return RegistrationConfig(solver=default_solver)


def cli_main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "generate": _cmd_generate,
        "register": _cmd_register,
        "compare": _cmd_compare,
        "sweep": _cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except RegistrationError as exc:
        print(f"registration failed: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
