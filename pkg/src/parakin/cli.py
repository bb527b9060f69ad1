"""Command-line entry point: ``parakin <command> ...``.

Exit status: 0 success or feasible, 1 usage error, 2 bad config or atlas
file, 3 infeasible task, 4 internal error or failed verification.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .atlas_io import AtlasError, read_atlas, write_atlas
from .celltree import CellLabel, leaf_sign
from .config import ConfigError, RunConfig, load_config
from .kinematics import (
    GeometryError,
    JointConfig,
    branch_arrays,
    classify_singularity,
    forward_kinematics,
    inverse_kinematics,
    jacobians,
)
from .regions import RegionAtlas, build_atlas, is_workspace_n_connected
from .render import UnknownRegionId, render_region_map
from .trajectory import ContinuousTask, PointToPointTask, check_continuous, check_point_to_point

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3, 4

log = logging.getLogger("parakin")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sign(text: str) -> int:
    if text in ("+1", "1", "+"):
        return 1
    if text in ("-1", "-"):
        return -1
    raise argparse.ArgumentTypeError(f"sigma must be +1 or -1, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="parakin", description="Workspace regions and task feasibility of a planar five-bar.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", type=Path, help="run configuration (default: shipped five-bar)")

    def with_atlas(sp):
        with_config(sp)
        sp.add_argument("--atlas", type=Path, help="atlas file (default: build from the config)")
        sp.add_argument("--max-depth", type=int, help="override decomp.max_depth when building")

    sp = sub.add_parser("regions", help="build the region atlas and write it to a file")
    with_config(sp)
    sp.add_argument("--max-depth", type=int, help="override decomp.max_depth")
    sp.add_argument("-o", "--out", type=Path, required=True, help="atlas file to write")

    sp = sub.add_parser("map", help="render region maps as PGM and SVG")
    with_atlas(sp)
    sp.add_argument("selectors", nargs="+", help="workspace, singular, T<j> or N<j>")
    sp.add_argument("-o", "--out-dir", type=Path, default=Path("."), help="output directory")

    sp = sub.add_parser("check-pp", help="point-to-point feasibility")
    with_atlas(sp)
    sp.add_argument("-p", "--point", dest="points", nargs=2, type=float, action="append", default=[],
                    metavar=("X", "Y"), help="waypoint, repeat in order")
    sp.add_argument("--task", help="name of a [task.pp.NAME] block in the config")

    sp = sub.add_parser("check-ct", help="continuous-trajectory feasibility")
    with_atlas(sp)
    sp.add_argument("-p", "--point", dest="points", nargs=2, type=float, action="append", default=[],
                    metavar=("X", "Y"), help="polyline vertex, repeat in order")
    sp.add_argument("--task", help="name of a [task.ct.NAME] block in the config")
    sp.add_argument("--step", type=float, help="sampling step of the joint witness")

    sp = sub.add_parser("fk", help="forward kinematics, all assembly branches")
    with_config(sp)
    sp.add_argument("--theta1", type=float, required=True)
    sp.add_argument("--theta2", type=float, required=True)
    sp.add_argument("--sigma", type=_sign, help="only the branch with this sign of det A")

    sp = sub.add_parser("ik", help="inverse kinematics, all working modes")
    with_config(sp)
    sp.add_argument("--x", type=float, required=True)
    sp.add_argument("--y", type=float, required=True)

    sp = sub.add_parser("verify", help="check atlas invariants")
    with_atlas(sp)
    return p


def _load_config(args) -> RunConfig:
    cfg = load_config(args.config)
    depth = getattr(args, "max_depth", None)
    if depth is not None:
        cfg = replace(cfg, decomposition=replace(cfg.decomposition, max_depth=depth))
    return cfg


def _load_atlas(args, cfg: RunConfig) -> RegionAtlas:
    if args.atlas is not None:
        return read_atlas(args.atlas)
    return build_atlas(cfg.geometry, cfg.decomposition, cfg.root)


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, sort_keys=False)
    sys.stdout.write("\n")


def atlas_summary(atlas: RegionAtlas) -> dict:
    return {
        "aspects": len(atlas.aspects),
        "aspects_by_sign": {
            "-1": sum(a.sigma < 0 for a in atlas.aspects),
            "+1": sum(a.sigma > 0 for a in atlas.aspects),
        },
        "reachable_regions": len(atlas.regions),
        "regions": [
            {"id": r.id, "sigma": r.sigma, "aspect_ids": list(r.aspect_ids), "area": n.area}
            for r, n in zip(atlas.regions, atlas.n_regions)
        ],
        "workspace_n_connected": is_workspace_n_connected(atlas),
        "leaf_counts": [t.n_leaves for t in atlas.trees],
    }


def cmd_regions(args) -> int:
    cfg = _load_config(args)
    atlas = build_atlas(cfg.geometry, cfg.decomposition, cfg.root)
    write_atlas(atlas, args.out)
    _emit({"atlas": str(args.out), **atlas_summary(atlas)})
    return EXIT_OK


def cmd_map(args) -> int:
    cfg = _load_config(args)
    atlas = _load_atlas(args, cfg)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for sel in args.selectors:
        try:
            rendered = render_region_map(atlas, sel, cfg.render)
        except (ValueError, UnknownRegionId) as exc:
            raise UsageError(str(exc).strip("'")) from None
        for ext, text in (("pgm", rendered.pgm), ("svg", rendered.svg)):
            path = args.out_dir / f"{sel}.{ext}"
            path.write_text(text, encoding="utf-8")
            written.append(str(path))
    _emit({"written": written})
    return EXIT_OK


def _task_points(args, pool: dict, what: str):
    if args.task and args.points:
        raise UsageError("give either --task or --point, not both")
    if args.task:
        if args.task not in pool:
            raise UsageError(f"no {what} task named {args.task!r} in the config")
        return pool[args.task]
    return None


def cmd_check_pp(args) -> int:
    cfg = _load_config(args)
    task = _task_points(args, cfg.pp_tasks, "point-to-point")
    if task is None:
        if not args.points:
            raise UsageError("check-pp needs at least one waypoint")
        task = PointToPointTask(tuple(args.points))
    report = check_point_to_point(_load_atlas(args, cfg), task)
    _emit(report.to_dict())
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_check_ct(args) -> int:
    cfg = _load_config(args)
    spec = _task_points(args, cfg.ct_tasks, "continuous")
    step = args.step
    if spec is None:
        if len(args.points) < 2:
            raise UsageError("check-ct needs at least two vertices")
        task = ContinuousTask(tuple(args.points))
    else:
        task = spec.task
        step = step if step is not None else spec.step
    if step is not None and not step > 0:
        raise UsageError("--step must be positive")
    report = check_continuous(_load_atlas(args, cfg), task, step)
    _emit(report.to_dict())
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_fk(args) -> int:
    geom = _load_config(args).geometry
    q = JointConfig(args.theta1, args.theta2)
    sigmas = (args.sigma,) if args.sigma is not None else (-1, 1)
    out = []
    for s in sigmas:
        sol = forward_kinematics(geom, q, s)
        if sol is None:
            continue
        entry = {"sigma": s, "x": sol.point.x, "y": sol.point.y, "degenerate": sol.degenerate}
        M = jacobians(geom, sol.point, q)
        entry["detA"] = M.detA
        entry["singularity"] = classify_singularity(M).value
        out.append(entry)
    _emit({"theta1": q.theta1, "theta2": q.theta2, "solutions": out})
    return EXIT_OK


def cmd_ik(args) -> int:
    geom = _load_config(args).geometry
    X = (args.x, args.y)
    out = []
    for sol in inverse_kinematics(geom, X):
        M = jacobians(geom, X, sol.q)
        out.append(
            {
                "mode": str(sol.mode),
                "theta1": sol.q.theta1,
                "theta2": sol.q.theta2,
                "detA": M.detA,
                "sigma": int(math.copysign(1, M.detA)),
                "singularity": classify_singularity(M).value,
            }
        )
    _emit({"x": X[0], "y": X[1], "solutions": out})
    return EXIT_OK


def verify_atlas(atlas: RegionAtlas, samples_per_aspect: int = 64) -> list[dict]:
    """Structural and kinematic invariants of an atlas; one entry per check."""
    checks = []

    def record(name, ok, detail=""):
        checks.append({"check": name, "ok": bool(ok), "detail": detail})

    root_vol = atlas.root.volume
    vols = [float(t.leaf_volumes().sum()) for t in atlas.trees]
    record("trees partition the root box", all(math.isclose(v, root_vol, rel_tol=1e-12) for v in vols))

    signs = [leaf_sign(t) for t in atlas.trees]
    bad = []
    for a in atlas.aspects:
        labels = atlas.trees[a.mode_index].labels[list(a.leaves)]
        if np.any(labels != CellLabel.FREE) or np.any(signs[a.mode_index][list(a.leaves)] != a.sigma):
            bad.append(a.id)
    record("aspects are Free leaves of one det A sign", not bad, f"bad aspects {bad}" if bad else "")

    owner = [rid for r in atlas.regions for rid in r.aspect_ids]
    record(
        "every aspect lies in exactly one reachable region",
        sorted(owner) == [a.id for a in atlas.aspects],
    )
    mixed = [r.id for r in atlas.regions if any(atlas.aspects[i].sigma != r.sigma for i in r.aspect_ids)]
    record("reachable regions keep one det A sign", not mixed, f"regions {mixed}" if mixed else "")

    union_ok = True
    for r in atlas.regions:
        union = np.zeros(atlas.trees[0].finest_shape, dtype=bool)
        for aid in r.aspect_ids:
            union |= atlas.mask(atlas.t_regions[aid])
        union_ok &= np.array_equal(union, atlas.mask(atlas.n_regions[r.id]))
    record("N-connected projections are unions of their T-connected ones", union_ok)

    # lift leaf centres back to joint space on the aspect's branch
    rng = np.random.default_rng(0)
    misses = 0
    total = 0
    for a in atlas.aspects:
        tree = atlas.trees[a.mode_index]
        leaves = np.asarray(a.leaves)
        pick = leaves if len(leaves) <= samples_per_aspect else rng.choice(leaves, samples_per_aspect, replace=False)
        lo, hi = tree.leaf_bounds(pick)
        centres = 0.5 * (lo + hi)
        br = branch_arrays(atlas.geometry, a.mode, centres[:, 0], centres[:, 1])
        good = br.ok & (np.sign(br.det_a) == a.sigma)
        misses += int(np.sum(~good))
        total += len(pick)
    record("aspect leaf centres admit the aspect's branch and sign", misses == 0, f"{misses}/{total} misses")
    return checks


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    atlas = _load_atlas(args, cfg)
    checks = verify_atlas(atlas)
    ok = all(c["ok"] for c in checks)
    _emit({"ok": ok, "checks": checks})
    return EXIT_OK if ok else EXIT_INTERNAL


COMMANDS = {
    "regions": cmd_regions,
    "map": cmd_map,
    "check-pp": cmd_check_pp,
    "check-ct": cmd_check_ct,
    "fk": cmd_fk,
    "ik": cmd_ik,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"parakin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, GeometryError, AtlasError, OSError) as exc:
        print(f"parakin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"parakin: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
