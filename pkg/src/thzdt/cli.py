"""Command line interface.

Subcommands mirror the pipeline stages so each can run standalone on
files, plus ``run-all`` for the whole chain. Outputs default into the
directory named by ``--out`` or the ``THZDT_OUT`` environment variable.

A JSON file passed with ``--config`` supplies defaults for any long
option (keys use underscores: ``{"max_order": 1}``); explicit flags win.

Exit codes: 0 success, 1 file problems, 2 validation problems,
3 numerical failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _out_dir(args) -> str:
    out = getattr(args, "out_dir", None) or os.environ.get("THZDT_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_scene(path):
    from .scene import load_scene

    if not path:
        raise ValueError("--scene is required for this command")
    return load_scene(path)


def _apply_config(args: argparse.Namespace, parser_defaults: dict):
    """Fill options the user left at their default from the config file."""
    cfg_path = getattr(args, "config", None)
    if not cfg_path:
        return
    with open(cfg_path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{cfg_path}: config must be a JSON object")
    for key, value in doc.items():
        if not hasattr(args, key):
            raise ValueError(f"{cfg_path}: unknown config key {key!r}")
        if getattr(args, key) == parser_defaults.get(key):
            setattr(args, key, value)


def cmd_scene(args) -> int:
    from .scene import canonical_scene, save_scene

    if args.action == "init":
        out = args.scene or os.path.join(_out_dir(args), "scene.json")
        save_scene(canonical_scene(), out)
        print(f"wrote {out}")
        return EXIT_OK
    scene = _load_scene(args.scene)
    print(
        f"{args.scene}: ok ({len(scene.obstacles)} obstacles, "
        f"{len(scene.nodes)} nodes, {len(scene.surfaces)} faces)"
    )
    return EXIT_OK


def cmd_trace(args) -> int:
    from .raytrace import save_paths_csv, trace
    from .scene import aim, probe_node

    scene = _load_scene(args.scene)
    if args.tx not in scene.nodes:
        raise ValueError(f"unknown node {args.tx!r}")
    if args.rx not in scene.nodes:
        raise ValueError(f"unknown node {args.rx!r}")
    tx = scene.nodes[args.tx]
    rx_pos = scene.nodes[args.rx].position
    if args.aim:
        tx = aim(tx, rx_pos)
    rx = probe_node(rx_pos, name=args.rx) if args.probe else scene.nodes[args.rx]
    paths = trace(scene, tx, rx, max_order=args.max_order)
    out = args.out or os.path.join(_out_dir(args), f"paths_{args.tx}_{args.rx}.csv")
    save_paths_csv(out, [(args.tx, args.rx, p) for p in paths])
    print(f"{args.tx}->{args.rx}: {len(paths)} paths, wrote {out}")
    return EXIT_OK


def cmd_sound(args) -> int:
    from .pipeline import PipelineConfig
    from .raytrace import trace
    from .scene import HORN, aim, probe_node
    from .sounder import save_sounding, synthesize_cfr

    scene = _load_scene(args.scene)
    for node in (args.tx, args.rx):
        if node not in scene.nodes:
            raise ValueError(f"unknown node {node!r}")
    cfg = PipelineConfig(seed=args.seed, max_order=args.max_order)
    rx_pos = scene.nodes[args.rx].position
    tx = aim(scene.nodes[args.tx], rx_pos)
    traced = trace(
        scene, tx, probe_node(rx_pos, name=args.rx),
        max_order=cfg.max_order, power_floor_db=cfg.power_floor_db,
    )
    snd = synthesize_cfr(
        traced, cfg.grid, cfg.freqs(),
        rx_pattern=HORN, noise_power_db=args.noise_db,
        seed=args.seed, tx_id=args.tx, rx_id=args.rx,
    )
    base = args.out or os.path.join(_out_dir(args), f"sounding_{args.tx}_{args.rx}")
    save_sounding(snd, base)
    print(f"{args.tx}->{args.rx}: {len(traced)} paths sounded, wrote {base}.json/.csv")
    return EXIT_OK


def cmd_extract(args) -> int:
    from .chanest import extract_mpcs, save_mpcs_csv
    from .sounder import load_sounding

    snd = load_sounding(args.sounding)
    mpcs = extract_mpcs(
        snd, rel_threshold_db=args.threshold, min_separation_bins=args.min_separation
    )
    out = args.out or os.path.join(_out_dir(args), "mpcs.csv")
    save_mpcs_csv(out, [(snd.tx_id, snd.rx_id, p) for p in mpcs])
    print(f"{snd.tx_id}->{snd.rx_id}: {len(mpcs)} components, wrote {out}")
    return EXIT_OK


def cmd_fit_abg(args) -> int:
    from .chanest import fit_abg, load_pl_samples_csv, save_abg_json

    samples = load_pl_samples_csv(args.samples)
    model = fit_abg(samples, args.condition)
    out = args.out or os.path.join(_out_dir(args), f"abg_{args.condition}.json")
    save_abg_json(out, model)
    print(
        f"{args.condition}: alpha={model.alpha:.4f} beta={model.beta:.4f} "
        f"({model.n_samples} samples), wrote {out}"
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calib import match_paths, save_matching_json
    from .chanest import load_mpcs_csv
    from .raytrace import load_paths_csv

    measured = [p for _, _, p in load_mpcs_csv(args.measured)]
    traced = [p for _, _, p in load_paths_csv(args.traced)]
    matching = match_paths(measured, traced)
    out = args.out or os.path.join(_out_dir(args), "matching.json")
    save_matching_json(out, matching)
    print(
        f"{len(matching.pairs)} pairs matched "
        f"({len(matching.unmatched_measured)} measured / "
        f"{len(matching.unmatched_rt)} traced unmatched), wrote {out}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    from . import inf as inf_mod

    samples = inf_mod.load_dataset_csv(args.dataset)
    cfg = inf_mod.TrainConfig(epochs=args.epochs, seed=args.seed)
    model, history = inf_mod.train(samples, cfg)
    out = args.out or os.path.join(_out_dir(args), "model.json")
    inf_mod.save_model(model, out)
    print(
        f"trained on {len(samples)} samples: loss {history[0]:.6g} -> "
        f"{history[-1]:.6g}, wrote {out}"
    )
    return EXIT_OK


def cmd_map(args) -> int:
    from . import inf as inf_mod
    from .sysperf import build_radio_map, save_radio_map

    scene = _load_scene(args.scene)
    model = None
    if args.source == "inf":
        if not args.model:
            raise ValueError("--model is required for the inf source")
        model = inf_mod.load_model(args.model)
    m = build_radio_map(
        scene, args.tx, args.source, model=model,
        cell_m=args.grid_step, max_order=args.max_order,
    )
    base = args.out or os.path.join(_out_dir(args), f"map_{args.source}_{args.tx}")
    save_radio_map(m, base)
    print(f"{args.tx} {args.source} map {m.nx}x{m.ny}, wrote {base}.json/.csv")
    return EXIT_OK


def cmd_coverage(args) -> int:
    from .sysperf import (
        Deployment,
        LinkBudget,
        coverage_curve,
        coverage_probability,
        load_radio_map,
        save_coverage_csv,
    )

    serving = load_radio_map(args.map)
    interferers = [load_radio_map(p) for p in args.interferer]
    dep = Deployment(serving=serving, interferers=interferers)
    if args.threshold is not None:
        print("%.9g" % coverage_probability(dep, LinkBudget(), args.threshold))
        return EXIT_OK
    lo, hi, step = args.thresholds
    thresholds = np.arange(lo, hi + step / 2.0, step)
    cov = coverage_curve(dep, LinkBudget(), thresholds)
    out = args.out or os.path.join(_out_dir(args), f"coverage_{serving.tx_id}.csv")
    save_coverage_csv(out, thresholds, cov)
    at_zero = cov[np.abs(thresholds) < 1e-9]
    extra = f", {100 * at_zero[0]:.1f}% at 0 dB" if at_zero.size else ""
    print(f"{serving.tx_id}: {len(thresholds)} thresholds{extra}, wrote {out}")
    return EXIT_OK


def cmd_run_all(args) -> int:
    from .pipeline import PipelineConfig, run_all

    cfg = PipelineConfig(
        seed=args.seed,
        max_order=args.max_order,
        dataset_size=args.dataset_size,
        epochs=args.epochs,
        map_cell_m=args.grid_step,
    )
    scene = _load_scene(args.scene) if args.scene else None
    out = _out_dir(args)
    summary = run_all(out, cfg, scene=scene)
    print(
        f"run complete: {summary['n_samples']} samples, final loss "
        f"{summary['final_loss']:.6g}, products in {out}"
    )
    return EXIT_OK


def _thresholds(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("thresholds must be lo:hi:step")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0.0 or hi < lo:
        raise argparse.ArgumentTypeError("thresholds must ascend")
    return lo, hi, step


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thzdt",
        description="Digital-twin toolchain for directional indoor radio channels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scene=True):
        if scene:
            p.add_argument("--scene", help="scene JSON path")
        p.add_argument("--out-dir", help="output directory (or $THZDT_OUT)")
        p.add_argument("--config", help="JSON file with option defaults")

    p = sub.add_parser("scene", help="create or check a scene file")
    p.add_argument("action", choices=["init", "validate"])
    common(p)
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("trace", help="ray trace one link")
    common(p)
    p.add_argument("--tx", required=True)
    p.add_argument("--rx", required=True)
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--aim", action="store_true", help="steer the tx horn at the rx")
    p.add_argument("--probe", action="store_true", help="isotropic probe on the rx side")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("sound", help="synthesize a directional sounding")
    common(p)
    p.add_argument("--tx", required=True)
    p.add_argument("--rx", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--noise-db", type=float, default=-120.0)
    p.add_argument("--out", help="output base path (writes .json and .csv)")
    p.set_defaults(func=cmd_sound)

    p = sub.add_parser("extract", help="estimate multipath components")
    common(p, scene=False)
    p.add_argument("--sounding", required=True, help="sounding header JSON")
    p.add_argument("--threshold", type=float, default=25.0)
    p.add_argument("--min-separation", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit-abg", help="fit the alpha/beta distance law")
    common(p, scene=False)
    p.add_argument("--samples", required=True, help="path-loss sample CSV")
    p.add_argument("--condition", choices=["los", "nlos", "all"], default="all")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_abg)

    p = sub.add_parser("calibrate", help="match measured against traced paths")
    common(p, scene=False)
    p.add_argument("--measured", required=True, help="extracted component CSV")
    p.add_argument("--traced", required=True, help="traced path CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="train the neural field")
    common(p, scene=False)
    p.add_argument("--dataset", required=True, help="dataset CSV")
    p.add_argument("--epochs", type=int, default=1200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("map", help="build a radio map")
    common(p)
    p.add_argument("--tx", required=True)
    p.add_argument("--source", choices=["rt", "inf"], default="rt")
    p.add_argument("--model", help="model JSON (inf source)")
    p.add_argument("--grid-step", type=float, default=0.25)
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--out", help="output base path (writes .json and .csv)")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("coverage", help="coverage curve from radio maps")
    common(p, scene=False)
    p.add_argument("--map", required=True, help="serving map header JSON")
    p.add_argument(
        "--interferer", action="append", default=[], help="interferer map JSON (repeatable)"
    )
    p.add_argument(
        "--thresholds", type=_thresholds, default=(-10.0, 30.0, 2.0),
        help="lo:hi:step in dB for the curve",
    )
    p.add_argument(
        "--threshold", type=float,
        help="single threshold in dB; prints the covered fraction instead",
    )
    p.add_argument("--out")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("run-all", help="execute the whole pipeline")
    common(p)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--dataset-size", type=int, default=200)
    p.add_argument("--epochs", type=int, default=1200)
    p.add_argument("--grid-step", type=float, default=0.25)
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        defaults = {
            a.dest: a.default
            for a in parser._subparsers._group_actions[0].choices[args.command]._actions
        }
        _apply_config(args, defaults)
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
