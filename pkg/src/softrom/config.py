"""YAML config parsing: meshes, materials, boundaries, force scenarios.

Configs are plain mappings; unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .elastic import Material
from .fullsolver import ForceEntry, ForceScenario, VertexSelector
from .mesh import (
    BoundaryCondition,
    TetMesh,
    load_mesh,
    load_mesh_native,
    make_bar_mesh,
    make_ellipsoid_mesh,
    no_boundary,
)
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_yaml(path) -> dict:
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return data


def parse_material(d: dict) -> Material:
    _check_keys(d, {"youngs_modulus", "poisson_ratio"}, "material")
    return Material(float(d.get("youngs_modulus", 1e5)), float(d.get("poisson_ratio", 0.45)))


def parse_mesh(d: dict) -> TetMesh:
    _check_keys(d, {"kind", "nx", "ny", "nz", "dims", "density", "radii", "cells", "path",
                    "format"}, "mesh")
    kind = d.get("kind", "bar")
    density = float(d.get("density", 1000.0))
    if kind == "bar":
        return make_bar_mesh(int(d["nx"]), int(d["ny"]), int(d["nz"]), d["dims"], density)
    if kind == "ellipsoid":
        return make_ellipsoid_mesh(d["radii"], int(d.get("cells", 8)), density)
    if kind == "file":
        fmt = d.get("format", "node_ele")
        if fmt == "native":
            return load_mesh_native(d["path"])
        return load_mesh(d["path"], fmt, density)
    raise ConfigError(f"unknown mesh kind {kind!r}")


def parse_selector(d: dict) -> VertexSelector:
    _check_keys(d, {"kind", "indices", "min", "max", "axis", "op", "value"}, "selector")
    kind = d["kind"]
    if kind == "all":
        return VertexSelector(kind="all")
    if kind == "indices":
        return VertexSelector(kind="indices", indices=tuple(int(i) for i in d["indices"]))
    if kind == "box":
        return VertexSelector(kind="box", box_min=tuple(d["min"]), box_max=tuple(d["max"]))
    if kind == "axis":
        axis = d["axis"]
        axis = {"x": 0, "y": 1, "z": 2}.get(axis, axis)
        return VertexSelector(kind="axis", axis=int(axis), op=d.get("op", "<"),
                              value=float(d["value"]))
    raise ConfigError(f"unknown selector kind {kind!r}")


def parse_boundary(d: dict | None, mesh: TetMesh) -> BoundaryCondition:
    if not d:
        return no_boundary()
    _check_keys(d, {"fixed", "prescribed"}, "boundary")
    sel = parse_selector(d["fixed"])
    fixed = sel.resolve(mesh)
    prescribed = {}
    for item in d.get("prescribed", []):
        prescribed[int(item["vertex"])] = np.asarray(item["displacement"], dtype=np.float64)
    bc = BoundaryCondition(fixed_vertices=fixed, prescribed=prescribed)
    bc.validate(mesh)
    return bc


def parse_scenario(d: dict) -> ForceScenario:
    _check_keys(d, {"gravity", "forces"}, "scenario")
    entries = []
    for f in d.get("forces", []):
        _check_keys(f, {"t0", "t1", "select", "force"}, "force entry")
        t1 = f.get("t1", "inf")
        entries.append(ForceEntry(
            t0=float(f.get("t0", 0.0)),
            t1=np.inf if t1 in ("inf", None) else float(t1),
            selector=parse_selector(f["select"]),
            force=tuple(float(x) for x in f["force"]),
        ))
    return ForceScenario(entries=tuple(entries), gravity=tuple(d.get("gravity", (0, 0, 0))))


_TRAIN_KEYS = {"model", "k", "r", "epochs", "learning_rate", "batch_size", "seed",
               "checkpoint_every", "pca_init", "icnn_hidden", "encoder_hidden",
               "mlp_hidden", "activation", "softplus_beta", "k_linear",
               "init_response_fraction"}


def parse_train_config(d: dict, **overrides) -> TrainConfig:
    _check_keys(d, _TRAIN_KEYS, "training")
    kw = {key: val for key, val in d.items() if key != "k_linear"}
    kw.update(overrides)
    return TrainConfig(**kw)
