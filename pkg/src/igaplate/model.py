"""Multi-patch models: the benchmark geometry generators, JSON model files,
and uniform refinement of the solution spaces.

All generators shift the interior solution knots of patch i by
sqrt(2)/100 * (i+1)/N so every interface is non-conforming at every
refinement level; the geometry maps themselves stay watertight and exact.
"""

import json
import math

import numpy as np

from .assembly import SIDES, Patch, PlateMaterial
from .errors import ModelError
from .manufactured import get_case
from .splines import GeometryMap, KnotVector, TensorSpace, make_open_knots

__all__ = [
    "MultiPatchModel",
    "load_model",
    "save_model",
    "builtin_model",
    "four_patch_curved",
    "nine_patch",
    "three_patch",
    "two_patch_strip",
    "four_patch_square",
]

KNOT_SHIFT = math.sqrt(2.0) / 100.0


class MultiPatchModel:
    """Patches plus material, load specification, and manufactured case."""

    def __init__(self, patches, material, case_name=None, constant_load=None,
                 line_loads=None, name="model", interfaces=None):
        self.patches = list(patches)
        self.material = material
        self.case_name = case_name
        self.constant_load = constant_load
        self.line_loads = list(line_loads or [])
        self.name = name
        self.explicit_interfaces = interfaces
        for ll in self.line_loads:
            if ll.get("patch") not in range(len(self.patches)) or ll.get("side") not in SIDES:
                raise ModelError("bad line load entry %r" % (ll,), "model:load")

    @property
    def npatches(self):
        return len(self.patches)

    def case(self):
        return get_case(self.case_name) if self.case_name else None

    def ndof(self):
        return sum(p.space.ndof for p in self.patches)

    def offsets(self):
        off = np.cumsum([0] + [p.space.ndof for p in self.patches])
        return off

    def n_elements(self):
        return sum(p.space.kv1.nspans * p.space.kv2.nspans for p in self.patches)

    def refined(self, levels=1):
        return MultiPatchModel(
            [p.refined(levels) for p in self.patches], self.material,
            self.case_name, self.constant_load, self.line_loads,
            name=self.name, interfaces=self.explicit_interfaces)

    def bbox_diameter(self):
        cps = np.concatenate([p.geometry.control_points.reshape(-1, 2)
                              for p in self.patches])
        return float(np.linalg.norm(cps.max(axis=0) - cps.min(axis=0)))

    def load_function(self):
        """Body load g(x, y): from the manufactured case or a constant."""
        case = self.case()
        if case is not None:
            D = self.material.D
            return lambda x, y: case.load(x, y, D)
        if self.constant_load is not None:
            g = float(self.constant_load)
            return lambda x, y: np.full(np.shape(x), g)
        return lambda x, y: np.zeros(np.shape(x))


def _shift_interior(kv, delta):
    knots = kv.knots.copy()
    p = kv.p
    knots[p + 1: -p - 1] += delta * (knots[-1] - knots[0])
    return KnotVector(knots, p)


def _solution_space(p, nel1, nel2, shift):
    kv1 = _shift_interior(make_open_knots(p, nel1), shift)
    kv2 = _shift_interior(make_open_knots(p, nel2), shift)
    return TensorSpace(kv1, kv2)


def _bilinear_geometry(x0, x1, y0, y1):
    return GeometryMap.from_corners(make_open_knots(1, 1), make_open_knots(1, 1),
                                    [[x0, y0], [x1, y0], [x0, y1], [x1, y1]])


def _biquadratic_patch(sw, se, nw, ne, m_south, m_east, m_north, m_west):
    """3x3 control net from corner points and edge-midpoint control points;
    interior point by the Coons average."""
    kv = make_open_knots(2, 1)
    cp = np.zeros((3, 3, 2))
    cp[0, 0], cp[2, 0], cp[0, 2], cp[2, 2] = sw, se, nw, ne
    cp[1, 0], cp[1, 2], cp[0, 1], cp[2, 1] = m_south, m_north, m_west, m_east
    cp[1, 1] = 0.5 * (cp[1, 0] + cp[1, 2] + cp[0, 1] + cp[2, 1]) \
        - 0.25 * (cp[0, 0] + cp[2, 0] + cp[0, 2] + cp[2, 2])
    return GeometryMap(TensorSpace(kv, kv), cp)


def four_patch_curved(p=2, nel=4, E=1e6, t=0.01, nu=0.0, bow=0.15,
                      case="sin_cos", shift=True):
    """[0,2]^2 split into four patches whose interior interfaces are curved
    quadratic arcs meeting at the cross-point (1,1); non-matching solution
    knots on every interface."""
    c = bow
    mids = {
        "vb": (1 + c, 0.5),   # vertical interface, bottom half
        "vt": (1 - c, 1.5),   # vertical interface, top half
        "hl": (0.5, 1 + c),   # horizontal interface, left half
        "hr": (1.5, 1 - c),   # horizontal interface, right half
    }
    geos = [
        _biquadratic_patch((0, 0), (1, 0), (0, 1), (1, 1),
                           (0.5, 0), mids["vb"], mids["hl"], (0, 0.5)),
        _biquadratic_patch((1, 0), (2, 0), (1, 1), (2, 1),
                           (1.5, 0), (2, 0.5), mids["hr"], mids["vb"]),
        _biquadratic_patch((0, 1), (1, 1), (0, 2), (1, 2),
                           mids["hl"], mids["vt"], (0.5, 2), (0, 1.5)),
        _biquadratic_patch((1, 1), (2, 1), (1, 2), (2, 2),
                           mids["hr"], (2, 1.5), (1.5, 2), mids["vt"]),
    ]
    tag_sets = [
        {"south": "clamped", "west": "clamped"},
        {"south": "clamped", "east": "clamped"},
        {"west": "clamped", "north": "clamped"},
        {"east": "clamped", "north": "clamped"},
    ]
    patches = []
    for i, (geo, tags) in enumerate(zip(geos, tag_sets)):
        s = KNOT_SHIFT * (i + 1) / 4.0 if shift else 0.0
        patches.append(Patch(geo, _solution_space(p, nel, nel, s), tags))
    return MultiPatchModel(patches, PlateMaterial(E, t, nu), case_name=case,
                           name="four_patch_curved")


def nine_patch(p=2, nel=4, E=1e6, t=0.01, nu=0.0, case="sin_cos", shift=True):
    """[0,3]^2 split 3x3; the center patch has no exterior boundary (floats)
    and four interior cross-points carry constraints."""
    patches = []
    for j in range(3):
        for i in range(3):
            pid = 3 * j + i
            geo = _bilinear_geometry(i, i + 1, j, j + 1)
            tags = {}
            if i == 0:
                tags["west"] = "clamped"
            if i == 2:
                tags["east"] = "clamped"
            if j == 0:
                tags["south"] = "clamped"
            if j == 2:
                tags["north"] = "clamped"
            s = KNOT_SHIFT * (pid + 1) / 9.0 if shift else 0.0
            patches.append(Patch(geo, _solution_space(p, nel, nel, s), tags))
    return MultiPatchModel(patches, PlateMaterial(E, t, nu), case_name=case,
                           name="nine_patch")


def three_patch(p=2, scale=1, E=1e6, t=0.01, nu=0.0, case="sin_cos", shift=True):
    """[0,2]^2 split into a full-height left patch and two right patches; the
    left patch meets each neighbour over only part of its side (geometrically
    non-conforming interfaces)."""
    nels = [(4, 8), (6, 6), (5, 5)]
    geos = [
        _bilinear_geometry(0, 1, 0, 2),
        _bilinear_geometry(1, 2, 0, 1),
        _bilinear_geometry(1, 2, 1, 2),
    ]
    tag_sets = [
        {"west": "clamped", "south": "clamped", "north": "clamped"},
        {"south": "clamped", "east": "clamped"},
        {"east": "clamped", "north": "clamped"},
    ]
    patches = []
    for i, (geo, tags, (n1, n2)) in enumerate(zip(geos, tag_sets, nels)):
        s = KNOT_SHIFT * (i + 1) / 3.0 if shift else 0.0
        patches.append(Patch(geo, _solution_space(p, n1 * scale, n2 * scale, s), tags))
    return MultiPatchModel(patches, PlateMaterial(E, t, nu), case_name=case,
                           name="three_patch")


def two_patch_strip(p=2, nel=4, E=1e6, t=0.01, nu=0.0, case=None, shift=False,
                    conforming=True):
    """[0,2]x[0,1] split along the straight interface x=1; conforming per side
    by default (the inf-sup test configuration)."""
    patches = []
    for i, (x0, x1) in enumerate([(0, 1), (1, 2)]):
        tags = {"south": "clamped", "north": "clamped"}
        tags["west" if i == 0 else "east"] = "clamped"
        s = KNOT_SHIFT * (i + 1) / 2.0 if shift else 0.0
        patches.append(Patch(_bilinear_geometry(x0, x1, 0, 1),
                             _solution_space(p, nel, nel, s), tags))
    return MultiPatchModel(patches, PlateMaterial(E, t, nu), case_name=case,
                           name="two_patch_strip")


def four_patch_square(p=2, nel=4, E=1e6, t=0.01, nu=0.0, case=None, shift=False):
    """[0,2]^2 split 2x2 by straight interfaces meeting at one cross-point
    (the coercivity test configuration)."""
    patches = []
    for j in range(2):
        for i in range(2):
            pid = 2 * j + i
            tags = {("west" if i == 0 else "east"): "clamped",
                    ("south" if j == 0 else "north"): "clamped"}
            s = KNOT_SHIFT * (pid + 1) / 4.0 if shift else 0.0
            patches.append(Patch(_bilinear_geometry(i, i + 1, j, j + 1),
                                 _solution_space(p, nel, nel, s), tags))
    return MultiPatchModel(patches, PlateMaterial(E, t, nu), case_name=case,
                           name="four_patch_square")


_BUILTINS = {
    "four_patch_curved": four_patch_curved,
    "nine_patch": nine_patch,
    "three_patch": three_patch,
    "two_patch_strip": two_patch_strip,
    "four_patch_square": four_patch_square,
}


def builtin_model(name, **kwargs):
    try:
        gen = _BUILTINS[name]
    except KeyError:
        raise ModelError("unknown builtin model %r (have: %s)"
                         % (name, ", ".join(sorted(_BUILTINS))), "model:name") from None
    return gen(**kwargs)


def _kv_to_json(kv):
    return {"degree": kv.p, "knots": kv.knots.tolist()}


def _kv_from_json(obj):
    try:
        return KnotVector(np.asarray(obj["knots"], dtype=float), int(obj["degree"]))
    except (KeyError, TypeError) as exc:
        raise ModelError("knot vector entry needs 'degree' and 'knots': %s" % exc,
                         "model:knots") from None


def save_model(model, path):
    doc = {
        "name": model.name,
        "material": {"E": model.material.E, "t": model.material.t,
                     "nu": model.material.nu},
        "load": {},
        "patches": [],
    }
    if model.case_name:
        doc["load"]["manufactured"] = model.case_name
    if model.constant_load is not None:
        doc["load"]["constant"] = model.constant_load
    if model.line_loads:
        doc["line_loads"] = model.line_loads
    if model.explicit_interfaces:
        doc["interfaces"] = model.explicit_interfaces
    for patch in model.patches:
        g = patch.geometry
        doc["patches"].append({
            "geometry": {
                "knots_u": _kv_to_json(g.space.kv1),
                "knots_v": _kv_to_json(g.space.kv2),
                "control_points": g.control_points.reshape(-1, 2).tolist(),
            },
            "space": {
                "knots_u": _kv_to_json(patch.space.kv1),
                "knots_v": _kv_to_json(patch.space.kv2),
            },
            "tags": dict(patch.tags),
        })
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError("cannot read model file %s: %s" % (path, exc), "model:json")
    try:
        m = doc["material"]
        material = PlateMaterial(float(m["E"]), float(m["t"]), float(m.get("nu", 0.0)))
    except (KeyError, TypeError) as exc:
        raise ModelError("bad material section: %s" % exc, "model:material")
    patches = []
    for k, entry in enumerate(doc.get("patches", [])):
        try:
            geo_spec = entry["geometry"]
            kv1 = _kv_from_json(geo_spec["knots_u"])
            kv2 = _kv_from_json(geo_spec["knots_v"])
            space = TensorSpace(kv1, kv2)
            cp = np.asarray(geo_spec["control_points"], dtype=float)
            if cp.ndim != 2 or cp.shape != (space.ndof, 2):
                raise ModelError(
                    "patch %d: control grid has %s rows, space needs %d"
                    % (k, cp.shape, space.ndof), "model:patch")
            geo = GeometryMap(space, cp.reshape(space.shape + (2,)))
            if "space" in entry:
                sol = TensorSpace(_kv_from_json(entry["space"]["knots_u"]),
                                  _kv_from_json(entry["space"]["knots_v"]))
            else:
                sol = space
            patches.append(Patch(geo, sol, dict(entry.get("tags", {}))))
        except ModelError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError("patch %d is malformed: %s" % (k, exc), "model:patch")
    if not patches:
        raise ModelError("model has no patches", "model:patch")
    load = doc.get("load", {})
    return MultiPatchModel(
        patches, material,
        case_name=load.get("manufactured"),
        constant_load=load.get("constant"),
        line_loads=doc.get("line_loads"),
        name=doc.get("name", "model"),
        interfaces=doc.get("interfaces"))
