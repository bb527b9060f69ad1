"""Atlas files: an ``atlas-v1`` header line followed by one JSON document.

Leaves are written with their dyadic coordinates ``[level, ix, iy]`` so the
tree is reproduced exactly; probe summaries without any branch sample are
written as ``null``.  Keys are sorted and floats use ``repr`` so identical
atlases serialise to identical bytes.
"""
from __future__ import annotations

import json
import math
import re

import numpy as np

from .celltree import SUMMARY_FIELDS, CellBox, CellLabel, CellTree, DecompositionConfig
from .kinematics import WORKING_MODES, ManipulatorGeometry, WorkingMode
from .regions import Aspect, ReachableRegion, RegionAtlas, RegionKind, WorkspaceRegion

FORMAT = "atlas-v1"


class AtlasError(ValueError):
    pass


class VersionError(AtlasError):
    pass


class CorruptAtlas(AtlasError):
    pass


def _num(v):
    v = float(v)
    return None if math.isnan(v) else v


def _tree_doc(mode: WorkingMode, tree: CellTree) -> dict:
    leaves = []
    for lvl, ix, lab, summ in zip(tree.levels, tree.indices, tree.labels, tree.summary):
        leaves.append([int(lvl), *map(int, ix), CellLabel(int(lab)).title, *map(_num, summ)])
    return {
        "mode": str(mode),
        "max_depth": tree.max_depth,
        "leaf_fields": ["level", "ix", "iy", "label", *SUMMARY_FIELDS],
        "leaves": leaves,
    }


def _region_doc(r: WorkspaceRegion) -> dict:
    return {
        "id": r.id,
        "source_id": r.source_id,
        "cell_count": r.cell_count,
        "area": r.area,
        "leaves": [list(p) for p in r.leaves],
    }


def atlas_document(atlas: RegionAtlas) -> dict:
    g = atlas.geometry
    return {
        "format": FORMAT,
        "geometry": {k: getattr(g, k) for k in ("L0", "L1", "L2", "L3", "L4", "theta_min", "theta_max")},
        "decomposition": {
            "max_depth": atlas.decomposition.max_depth,
            "samples_per_axis": atlas.decomposition.samples_per_axis,
            "kappa_a": atlas.decomposition.kappa_a,
            "kappa_b": atlas.decomposition.kappa_b,
            "leaf_budget": atlas.decomposition.leaf_budget,
        },
        "root_box": {"lo": list(atlas.root.lo), "hi": list(atlas.root.hi)},
        "trees": [_tree_doc(m, t) for m, t in zip(WORKING_MODES, atlas.trees)],
        "aspects": [
            {"id": a.id, "mode": str(a.mode), "sigma": a.sigma, "leaves": list(a.leaves)}
            for a in atlas.aspects
        ],
        "regions": [
            {"id": r.id, "sigma": r.sigma, "aspect_ids": list(r.aspect_ids)} for r in atlas.regions
        ],
        "projections": {
            "TConnected": [_region_doc(r) for r in atlas.t_regions],
            "NConnected": [_region_doc(r) for r in atlas.n_regions],
        },
        "metadata": atlas.metadata,
    }


def export_atlas(atlas: RegionAtlas) -> str:
    body = json.dumps(atlas_document(atlas), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return f"{FORMAT}\n{body}\n"


def import_atlas(text: str) -> RegionAtlas:
    header, _, body = text.partition("\n")
    header = header.strip()
    if header != FORMAT:
        if re.fullmatch(r"atlas-v\d+", header):
            raise VersionError(f"unsupported atlas version {header!r}, expected {FORMAT!r}")
        raise CorruptAtlas("missing atlas header line")
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise CorruptAtlas(f"atlas body is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CorruptAtlas("atlas body does not declare the expected format")
    try:
        return _atlas_from_doc(doc)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptAtlas(f"malformed atlas content: {exc!r}") from None


def _atlas_from_doc(doc: dict) -> RegionAtlas:
    geometry = ManipulatorGeometry(**doc["geometry"])
    decomposition = DecompositionConfig(**doc["decomposition"])
    root = CellBox(tuple(doc["root_box"]["lo"]), tuple(doc["root_box"]["hi"]))
    trees = []
    for mode, tdoc in zip(WORKING_MODES, doc["trees"], strict=True):
        if WorkingMode.parse(tdoc["mode"]) != mode:
            raise ValueError("trees out of working-mode order")
        rows = tdoc["leaves"]
        levels = [r[0] for r in rows]
        indices = [r[1:3] for r in rows]
        labels = [CellLabel.from_title(r[3]) for r in rows]
        summary = [[np.nan if v is None else float(v) for v in r[4:]] for r in rows]
        if any(len(r) != 4 + len(SUMMARY_FIELDS) for r in rows):
            raise ValueError("leaf row has the wrong number of fields")
        trees.append(
            CellTree(root, tdoc["max_depth"], levels, np.reshape(indices, (-1, 2)), labels,
                     np.reshape(summary, (-1, len(SUMMARY_FIELDS))))
        )
    aspects = tuple(
        Aspect(a["id"], WorkingMode.parse(a["mode"]), a["sigma"], tuple(a["leaves"])) for a in doc["aspects"]
    )
    regions = tuple(ReachableRegion(r["id"], tuple(r["aspect_ids"]), r["sigma"]) for r in doc["regions"])

    def regions_of(kind: RegionKind):
        return tuple(
            WorkspaceRegion(
                id=r["id"],
                kind=kind,
                source_id=r["source_id"],
                leaves=tuple((int(m), int(l)) for m, l in r["leaves"]),
                cell_count=r["cell_count"],
                area=r["area"],
            )
            for r in doc["projections"][kind.value]
        )

    return RegionAtlas(
        geometry,
        decomposition,
        root,
        tuple(trees),
        aspects,
        regions,
        regions_of(RegionKind.T_CONNECTED),
        regions_of(RegionKind.N_CONNECTED),
        doc["metadata"],
    )


def write_atlas(atlas: RegionAtlas, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(export_atlas(atlas))


def read_atlas(path) -> RegionAtlas:
    with open(path, encoding="utf-8") as fh:
        return import_atlas(fh.read())
