import numpy as np
import pytest

from igaplate.assembly import PatchQuadrature
from igaplate.errors import ModelError
from igaplate.model import (
    four_patch_curved,
    load_model,
    nine_patch,
    save_model,
    three_patch,
    two_patch_strip,
)
from igaplate.system import build_system, solve_direct


def broken_errors(model, u_full, case):
    """Broken L2/H1/H2 errors over all patches (quadrature against the exact
    fields)."""
    off = model.offsets()
    e0 = e1 = e2 = 0.0
    for pid, patch in enumerate(model.patches):
        c = u_full[off[pid]: off[pid + 1]]
        quad = PatchQuadrature(patch)
        for _, el in quad.elements():
            xq, yq = el["x"][:, 0], el["x"][:, 1]
            uh = el["val"] @ c
            ge = case.grad(xq, yq)
            He = case.hess(xq, yq)
            e0 += el["w"] @ (uh - case.value(xq, yq)) ** 2
            e1 += el["w"] @ ((el["gx"] @ c - ge[0]) ** 2 + (el["gy"] @ c - ge[1]) ** 2)
            e2 += el["w"] @ ((el["hxx"] @ c - He[0, 0]) ** 2
                             + 2 * (el["hxy"] @ c - He[0, 1]) ** 2
                             + (el["hyy"] @ c - He[1, 1]) ** 2)
    return np.sqrt([e0, e0 + e1, e0 + e1 + e2])


def test_two_patch_projected_solve_converges():
    base = two_patch_strip(p=2, nel=4, shift=True, case="sin_cos")
    case = base.case()
    errs = []
    for level in (0, 1, 2):
        model = base.refined(level)
        sysm = build_system(model, method="projected")
        sol = solve_direct(sysm)
        errs.append(broken_errors(model, sol.u, case))
    errs = np.array(errs)
    rates = np.log2(errs[:-1] / errs[1:])
    assert abs(rates[-1, 1] - 2) < 0.3  # H1
    assert abs(rates[-1, 2] - 1) < 0.3  # H2


def test_four_patch_curved_solve_converges():
    base = four_patch_curved(p=2, nel=4)
    case = base.case()
    errs = []
    for level in (0, 1, 2):
        model = base.refined(level)
        sysm = build_system(model, method="projected")
        assert len(sysm.interfaces) == 4
        assert len(sysm.constraints) == 1
        sol = solve_direct(sysm)
        errs.append(broken_errors(model, sol.u, case))
    errs = np.array(errs)
    rates = np.log2(errs[:-1] / errs[1:])
    assert abs(rates[-1, 1] - 2) < 0.3
    assert abs(rates[-1, 2] - 1) < 0.3


def test_interface_dofs_are_two_layers():
    model = two_patch_strip(p=2, nel=4)
    sysm = build_system(model)
    # free dofs of the strip: patch0 east layers + patch1 west layers survive
    # clamping; coupling rows must be exactly those two layers per side that
    # are not clamped
    n_free_rows = int(sysm.coupling_rows.sum())
    # each patch contributes 2 layers x (n2 - 4 free in y) edge functions
    n2 = model.patches[0].space.shape[1]
    assert n_free_rows == 2 * 2 * (n2 - 4)


def test_patch_internal_map_boxes():
    model = two_patch_strip(p=2, nel=4)
    sysm = build_system(model)
    boxes = sysm.patch_internal_map()
    internal = ~sysm.coupling_rows
    covered = np.concatenate([b["reduced"][b["reduced"] >= 0] for b in boxes])
    # every internal dof lies in exactly one patch box
    assert np.array_equal(np.sort(covered), np.where(internal)[0])


def test_model_save_load_roundtrip(tmp_path):
    model = three_patch(p=2)
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    assert back.npatches == 3
    assert back.material.E == model.material.E
    assert back.case_name == "sin_cos"
    for a, b in zip(model.patches, back.patches):
        assert np.allclose(a.geometry.control_points, b.geometry.control_points)
        assert np.allclose(a.space.kv1.knots, b.space.kv1.knots)
        assert a.tags == b.tags
    sysm = build_system(back)
    assert len(sysm.interfaces) == 3


def test_malformed_model_raises(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"material": {"E": 1e6, "t": 0.01}, "patches": [{"geometry": '
                    '{"knots_u": {"degree": 1, "knots": [0, 1, 0, 1]}, '
                    '"knots_v": {"degree": 1, "knots": [0, 0, 1, 1]}, '
                    '"control_points": [[0,0],[1,0],[0,1],[1,1]]}}]}')
    with pytest.raises(ModelError) as exc:
        load_model(path)
    assert exc.value.category == "model:knots"


def test_nine_patch_has_floating_center_and_four_crosspoints():
    model = nine_patch(p=2, nel=2)
    assert model.patches[4].tags == {}
    sysm = build_system(model)
    assert len(sysm.interfaces) == 12
    assert len(sysm.constraints) == 4
    for c in sysm.constraints:
        assert len(c.slaves) == 3
