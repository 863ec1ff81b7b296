"""Scene configuration files (JSON, ``schema_version`` 1).

Example::

    {
      "schema_version": 1,
      "objects": [
        {"box": {"counts": [7, 7, 7], "size": 0.2, "origin": [0, 0.01, 0]},
         "material": {"youngs_modulus": 1e5, "poisson_ratio": 0.3, "density": 1000},
         "velocity": [0, -1, 0]}
      ],
      "dt": 0.01, "frames": 50, "gravity": [0, -9.8, 0],
      "barrier": {"dhat_rel": 0.01, "kappa": 40,
                  "planes": [{"normal": [0, 1, 0], "offset": 0}]}
    }

An object is either ``{"mesh": "file.tet" | "file.obj"}`` (relative to the
config file) or a generated ``box``/``grid``/``polyline``.  ``dhat_rel`` is
resolved against the initial scene bounding-box diagonal.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .energy import BarrierParams, MaterialParams, Plane
from .mesh import load_mesh, make_mesh
from .scenes import box_tets, grid_triangles, polyline
from .solve import PcgConfig
from .stepper import MODES, StepConfig

SCHEMA_VERSION = 1

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "objects"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "objects": {"type": "array", "minItems": 1, "items": {
            "type": "object",
            "additionalProperties": False,
            "required": ["material"],
            "properties": {
                "mesh": {"type": "string"},
                "box": {"type": "object", "additionalProperties": False, "required": ["counts"],
                        "properties": {"counts": {"type": "array", "items": {"type": "integer", "minimum": 2},
                                                  "minItems": 3, "maxItems": 3},
                                       "size": {"oneOf": [_POS, _VEC3]}, "origin": _VEC3}},
                "grid": {"type": "object", "additionalProperties": False, "required": ["counts"],
                         "properties": {"counts": {"type": "array", "items": {"type": "integer", "minimum": 2},
                                                   "minItems": 2, "maxItems": 2},
                                        "size": _POS, "height": {"type": "number"}}},
                "polyline": {"type": "object", "additionalProperties": False, "required": ["count"],
                             "properties": {"count": {"type": "integer", "minimum": 2},
                                            "length": _POS, "height": {"type": "number"}}},
                "material": {"type": "object", "additionalProperties": False,
                             "required": ["youngs_modulus", "poisson_ratio", "density"],
                             "properties": {"youngs_modulus": _POS,
                                            "poisson_ratio": {"type": "number", "exclusiveMinimum": 0,
                                                              "exclusiveMaximum": 0.5},
                                            "density": _POS}},
                "translate": _VEC3,
                "velocity": _VEC3,
                "pinned": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
            "oneOf": [{"required": ["mesh"]}, {"required": ["box"]},
                      {"required": ["grid"]}, {"required": ["polyline"]}],
        }},
        "dt": _POS,
        "frames": {"type": "integer", "minimum": 0},
        "gravity": _VEC3,
        "barrier": {"type": "object", "additionalProperties": False, "required": ["kappa"],
                    "properties": {"dhat": _POS, "dhat_rel": _POS, "kappa": _POS,
                                   "planes": {"type": "array", "items": {
                                       "type": "object", "additionalProperties": False,
                                       "required": ["normal"],
                                       "properties": {"normal": _VEC3, "offset": {"type": "number"}}}}}},
        "coarsen_threshold": {"type": "number", "minimum": 0},
        "affine_threshold": {"type": "integer", "minimum": 0},
        "group_size": {"type": "integer", "minimum": 2, "maximum": 32},
        "pcg": {"type": "object", "additionalProperties": False,
                "properties": {"rel_tol": _POS, "max_iters": {"type": "integer", "minimum": 1},
                               "post_coarsen_max_iters": {"type": "integer", "minimum": 1}}},
        "newton": {"type": "object", "additionalProperties": False,
                   "properties": {"tol_factor": _POS, "max_iters": {"type": "integer", "minimum": 1},
                                  "ccd_slack": {"type": "number", "exclusiveMinimum": 0,
                                                "exclusiveMaximum": 1}}},
        "mode": {"enum": list(MODES)},
        "output_dir": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class Scene:
    mesh: object
    materials: list
    element_material: np.ndarray
    barrier: BarrierParams
    step_config: StepConfig
    frames: int
    x0: np.ndarray
    v0: np.ndarray
    pinned: np.ndarray
    output_dir: Path


def _object_geometry(obj, material, base):
    if "mesh" in obj:
        path = Path(obj["mesh"])
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError(f"mesh file not found: {path}")
        m = load_mesh(path, material)
        X, T, kind = m.rest_positions, m.elements, m.kind
    elif "box" in obj:
        b = obj["box"]
        X, T = box_tets(b["counts"], b.get("size", 1.0), b.get("origin", (0.0, 0.0, 0.0)))
        kind = "tet"
    elif "grid" in obj:
        g = obj["grid"]
        X, T = grid_triangles(*g["counts"], size=g.get("size", 1.0), height=g.get("height", 0.0))
        kind = "triangle"
    else:
        p = obj["polyline"]
        X, T = polyline(p["count"], p.get("length", 1.0), p.get("height", 0.0))
        kind = "edge"
    return X + np.asarray(obj.get("translate", (0.0, 0.0, 0.0))), T, kind


def build_scene(data, base=Path("."), mode=None, workers=1, output_dir=None):
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {exc.message}") from None

    verts, elems, densities, mat_idx, vel, pinned, materials = [], [], [], [], [], [], []
    kinds = set()
    offset = 0
    for k, obj in enumerate(data["objects"]):
        material = MaterialParams(**obj["material"])
        X, T, kind = _object_geometry(obj, material, base)
        kinds.add(kind)
        for p in obj.get("pinned", []):
            if p >= len(X):
                raise ConfigError(f"object {k}: pinned vertex {p} out of range")
            pinned.append(p + offset)
        verts.append(X)
        elems.append(T + offset)
        densities.append(np.full(len(T), material.density))
        mat_idx.append(np.full(len(T), k))
        vel.append(np.broadcast_to(np.asarray(obj.get("velocity", (0.0, 0.0, 0.0)), dtype=float), X.shape))
        materials.append(material)
        offset += len(X)
    if len(kinds) > 1:
        raise ConfigError(f"mixed element kinds are not supported: {sorted(kinds)}")
    mesh = make_mesh(np.vstack(verts), np.vstack(elems), kinds.pop(), density=np.concatenate(densities))

    b = data.get("barrier")
    barrier = None
    if b is not None:
        if ("dhat" in b) == ("dhat_rel" in b):
            raise ConfigError("barrier needs exactly one of dhat or dhat_rel")
        dhat = b["dhat"] if "dhat" in b else b["dhat_rel"] * mesh.bbox_diagonal()
        planes = []
        for p in b.get("planes", []):
            n = np.asarray(p["normal"], dtype=float)
            n = n / np.linalg.norm(n)
            planes.append(Plane(tuple(n.tolist()), float(p.get("offset", 0.0))))
        barrier = BarrierParams(dhat=dhat, kappa=b["kappa"], planes=tuple(planes))

    pcg = PcgConfig(**data.get("pcg", {}))
    nw = data.get("newton", {})
    cfg = StepConfig(
        dt=data.get("dt", 1e-2),
        newton_tol_factor=nw.get("tol_factor", 1e-3),
        max_newton_iters=nw.get("max_iters", 200),
        coarsen_threshold=data.get("coarsen_threshold", 5e-5),
        gravity=tuple(data.get("gravity", (0.0, -9.8, 0.0))),
        ccd_slack=nw.get("ccd_slack", 0.9),
        affine_threshold=data.get("affine_threshold", 32),
        group_size=data.get("group_size", 32),
        mode=mode or data.get("mode", "adaptive"),
        pcg=pcg,
        workers=workers,
    )
    out = Path(output_dir) if output_dir else base / data.get("output_dir", "out")
    return Scene(mesh=mesh, materials=materials, element_material=np.concatenate(mat_idx),
                 barrier=barrier, step_config=cfg, frames=data.get("frames", 0),
                 x0=mesh.rest_positions.copy(), v0=np.vstack(vel),
                 pinned=np.array(sorted(set(pinned)), dtype=np.int64), output_dir=out)


def load_scene(path, **overrides):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return build_scene(data, base=path.parent, **overrides)
