import numpy as np
import pytest
import scipy.sparse as sp

from igaplate.coupling import (
    apply_constraints,
    assemble_coupling_terms,
    build_constraint_matrix,
    build_interface_quadrature,
    build_projection,
    cross_point_constraints,
    detect_interfaces,
    penalty_parameters,
    scaled_penalty_parameters,
    vanilla_penalty_parameters,
    CrossPointConstraint,
    InterfaceDescriptor,
)
from igaplate.errors import ModelError
from igaplate.model import (
    four_patch_curved,
    four_patch_square,
    nine_patch,
    three_patch,
    two_patch_strip,
)
from igaplate.splines import KnotVector, make_open_knots


def test_detect_two_unit_squares():
    model = two_patch_strip(p=2, nel=4)
    ifaces = detect_interfaces(model)
    assert len(ifaces) == 1
    iface = ifaces[0]
    assert iface.measure == pytest.approx(1.0, abs=1e-10)
    assert iface.h == pytest.approx(0.25, abs=1e-10)
    assert {iface.master, iface.slave} == {0, 1}
    assert iface.slave == 0  # equal breakpoints: tie broken by lower patch id
    assert iface.reduced_knots.p == 0


def test_detect_four_patch_layout():
    model = four_patch_square(p=2, nel=2)
    ifaces = detect_interfaces(model)
    assert len(ifaces) == 4
    cps = cross_point_constraints(model, ifaces)
    assert len(cps) == 1
    c = cps[0]
    assert len(c.slaves) == 3
    assert np.allclose(c.location, (1.0, 1.0), atol=1e-9)


def test_detect_curved_four_patch():
    model = four_patch_curved(p=2, nel=2)
    ifaces = detect_interfaces(model)
    assert len(ifaces) == 4
    for iface in ifaces:
        assert iface.measure > 1.0  # curved arcs are longer than the chord
    cps = cross_point_constraints(model, ifaces)
    assert len(cps) == 1 and len(cps[0].slaves) == 3


def test_detect_three_patch_subinterval():
    model = three_patch(p=2)
    ifaces = detect_interfaces(model)
    assert len(ifaces) == 3
    # the left patch (id 0) meets each right patch over half of its east side
    part = [i for i in ifaces if 0 in (i.master, i.slave)]
    assert len(part) == 2
    for iface in part:
        lo, hi = iface.master_interval if iface.master == 0 else iface.slave_interval
        assert (hi - lo) == pytest.approx(0.5, abs=1e-9)
        assert iface.measure == pytest.approx(1.0, abs=1e-9)
    cps = cross_point_constraints(model, ifaces)
    assert len(cps) == 1
    assert len(cps[0].slaves) == 1  # only two corner dofs meet at (1,1)


def test_penalty_parameter_values():
    iface = InterfaceDescriptor(
        master=1, master_side="west", slave=0, slave_side="east",
        master_interval=(0, 1), slave_interval=(0, 1), reversed_orientation=False,
        knots=make_open_knots(2, 4), reduced_knots=make_open_knots(0, 4),
        measure=2.0, h=0.25)
    from igaplate.assembly import PlateMaterial
    mat = PlateMaterial(1e6, 0.01, 0.0)
    par = penalty_parameters(mat, iface, beta=3)
    assert par.alpha_defl == pytest.approx(2.56e6, rel=1e-12)
    assert par.alpha_rot == pytest.approx(2.1333e1, rel=1e-4)

    unit = InterfaceDescriptor(
        master=1, master_side="west", slave=0, slave_side="east",
        master_interval=(0, 1), slave_interval=(0, 1), reversed_orientation=False,
        knots=make_open_knots(2, 4), reduced_knots=make_open_knots(0, 4),
        measure=1.0, h=1.0)
    for beta in (1, 2, 3):
        par = penalty_parameters(mat, unit, beta=beta)
        assert par.alpha_defl == pytest.approx(mat.E * mat.t, rel=1e-12)
    # fixed ratio alpha_defl / alpha_rot = 12 / t^2
    par = penalty_parameters(mat, iface)
    assert par.alpha_defl / par.alpha_rot == pytest.approx(12 / mat.t ** 2, rel=1e-12)


def test_scaled_and_vanilla_parameters():
    from igaplate.assembly import PlateMaterial
    mat = PlateMaterial(1e6, 0.01, 0.0)
    iface = InterfaceDescriptor(
        master=1, master_side="west", slave=0, slave_side="east",
        master_interval=(0, 1), slave_interval=(0, 1), reversed_orientation=False,
        knots=make_open_knots(2, 4), reduced_knots=make_open_knots(0, 4),
        measure=1.0, h=0.25)
    par = scaled_penalty_parameters(mat, iface, delta=1e3)
    assert par.alpha_defl == pytest.approx(1e3 * 1e6 * 0.01 / 0.25)
    van = vanilla_penalty_parameters(mat)
    assert van.alpha_defl == van.alpha_rot == pytest.approx(1e10)


def test_projection_constant_and_span_averages():
    model = two_patch_strip(p=2, nel=3)
    iface = detect_interfaces(model)[0]
    quad = build_interface_quadrature(model, iface)
    proj = build_projection(model, iface, quad)

    # constant: projection reproduces it everywhere (p_red = 0)
    q = proj.project_callable(lambda t: np.ones_like(t), quad)
    assert np.allclose(proj.eval_reduced(q, np.linspace(0.05, 0.95, 9)), 1.0)

    # p_red = 0: projection of f equals its per-span average
    f = lambda t: t ** 2
    q = proj.project_callable(f, quad)
    bp = iface.reduced_knots.breakpoints
    for a, b, qa in zip(bp[:-1], bp[1:], q):
        exact = (b ** 3 - a ** 3) / 3 / (b - a)
        assert qa == pytest.approx(exact, rel=1e-12)

    # idempotence: projecting a reduced-space function returns it
    q2 = proj.project_callable(lambda t: proj.eval_reduced(q, t), quad)
    assert np.max(np.abs(q2 - q)) < 1e-12


def test_coupling_kernel_contains_smooth_fields():
    # a globally C1 field (here: linear in x, reproduced on both patches)
    model = two_patch_strip(p=2, nel=3)
    iface = detect_interfaces(model)[0]
    par = penalty_parameters(model.material, iface)
    K = assemble_coupling_terms(model, iface, par, "projected")
    vecs = []
    for pid, patch in enumerate(model.patches):
        g1 = patch.space.kv1.greville() + pid  # physical x on [0,1],[1,2]
        vecs.append(np.broadcast_to(g1[:, None], patch.space.shape).ravel())
    v = np.concatenate(vecs)
    assert np.max(np.abs(K @ v)) < 1e-10 * np.abs(K).max()
    # PSD
    evals = np.linalg.eigvalsh(K.toarray())
    assert evals.min() > -1e-10 * evals.max()


def test_coupling_energy_scales_with_alpha_rot():
    # deflection-continuous but kinked field: energy > 0, linear in alpha_rot
    model = two_patch_strip(p=2, nel=2)
    iface = detect_interfaces(model)[0]
    vecs = []
    for pid, patch in enumerate(model.patches):
        g1 = patch.space.kv1.greville()
        x = g1 + pid
        hat = 1.0 - np.abs(x - 1.0)  # C0 hat at the interface
        vecs.append(np.broadcast_to(hat[:, None], patch.space.shape).ravel())
    v = np.concatenate(vecs)
    from igaplate.coupling import PenaltyParameters
    e = []
    for ar in (1.0, 2.0):
        par = PenaltyParameters(alpha_defl=1.0, alpha_rot=ar)
        K = assemble_coupling_terms(model, iface, par, "projected")
        e.append(v @ (K @ v))
    assert e[0] > 0
    assert e[1] == pytest.approx(2 * e[0], rel=1e-9)


def test_orientation_invariance_master_slave_swap():
    model = two_patch_strip(p=2, nel=3)
    iface = detect_interfaces(model)[0]
    par = penalty_parameters(model.material, iface)
    K1 = assemble_coupling_terms(model, iface, par, "projected").toarray()
    swapped = InterfaceDescriptor(
        master=iface.slave, master_side=iface.slave_side,
        slave=iface.master, slave_side=iface.master_side,
        master_interval=iface.slave_interval, slave_interval=iface.master_interval,
        reversed_orientation=iface.reversed_orientation,
        knots=iface.knots, reduced_knots=iface.reduced_knots,
        measure=iface.measure, h=iface.h)
    K2 = assemble_coupling_terms(model, swapped, par, "projected").toarray()
    assert np.max(np.abs(K1 - K2)) < 1e-10 * np.max(np.abs(K1))


def test_penalized_solve_matches_saddle_point_oracle():
    # eliminate the multipliers from the perturbed saddle-point system and
    # compare with the penalized primal solve
    from igaplate.system import build_system
    from igaplate.coupling import _jump_rows, ProjectionOperator

    model = two_patch_strip(p=2, nel=4, E=10.0, t=1.0)
    model.constant_load = 1.0  # homogeneous clamping keeps the lifting trivial
    sysm = build_system(model, method="projected", beta=1)
    iface = sysm.interfaces[0]
    quad = build_interface_quadrature(model, iface)
    proj = ProjectionOperator(quad, model.offsets(), model.ndof())
    J_d, J_r = _jump_rows(quad, model.offsets(), model.ndof())
    par = penalty_parameters(model.material, iface, beta=1)

    free = sysm.free
    Jd_f, Jr_f = J_d[:, free], J_r[:, free]
    # bending-only block: subtract the penalty part from the reduced system
    Kc_f = assemble_coupling_terms(model, iface, par, "projected", quad)[free][:, free]
    A_pen = sysm.A.toarray()
    K_bend = A_pen - Kc_f.toarray()
    M = proj.M_red
    nr = M.shape[0]
    n = A_pen.shape[0]
    # [[K, Jd^T, Jr^T], [Jd, -M/a_d, 0], [Jr, 0, -M/a_r]] (u, l1, l2) = (f, 0, 0)
    S = np.zeros((n + 2 * nr, n + 2 * nr))
    S[:n, :n] = K_bend
    S[:n, n:n + nr] = Jd_f.T
    S[:n, n + nr:] = Jr_f.T
    S[n:n + nr, :n] = Jd_f
    S[n + nr:, :n] = Jr_f
    S[n:n + nr, n:n + nr] = -M / par.alpha_defl
    S[n + nr:, n + nr:] = -M / par.alpha_rot
    rhs = np.concatenate([sysm.rhs, np.zeros(2 * nr)])
    sol = np.linalg.solve(S, rhs)
    u_saddle = sol[:n]

    u_primal = np.linalg.solve(A_pen, sysm.rhs)
    scale = np.max(np.abs(u_primal))
    assert np.max(np.abs(u_saddle - u_primal)) < 1e-9 * scale
    # the eliminated multipliers are the projected, alpha-scaled jumps
    lam1 = sol[n:n + nr]
    assert np.allclose(lam1, par.alpha_defl * proj.solve(Jd_f @ u_saddle),
                       rtol=1e-8, atol=1e-8 * max(1, np.abs(lam1).max()))


def test_cross_point_constraint_matrix():
    cons = [CrossPointConstraint(master=2, slaves=[4, 5])]
    C, keep = build_constraint_matrix(6, cons)
    assert C.shape == (6, 4)
    u_hat = np.array([1.0, 2.0, 5.0, 3.0])
    u = C @ u_hat
    assert u[2] == u[4] == u[5] == 5.0  # master value propagates
    # each row has exactly one unit entry
    assert np.all(np.asarray(np.abs(C).sum(axis=1)).ravel() == 1.0)

    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 6))
    A = A + A.T
    f = rng.standard_normal(6)
    A_hat, f_hat = apply_constraints(sp.csr_matrix(A), f, C)
    # hand-computed congruence on the dense matrix
    Cd = C.toarray()
    assert np.max(np.abs(A_hat.toarray() - Cd.T @ A @ Cd)) < 1e-14
    assert np.max(np.abs(f_hat - Cd.T @ f)) < 1e-14
    assert np.max(np.abs(A_hat.toarray() - A_hat.toarray().T)) < 1e-14


def test_empty_constraints_identity():
    C, keep = build_constraint_matrix(5, [])
    assert np.array_equal(C.toarray(), np.eye(5))


def test_apply_constraints_dimension_mismatch():
    C, _ = build_constraint_matrix(5, [])
    with pytest.raises(ModelError):
        apply_constraints(sp.eye(4).tocsr(), np.zeros(4), C)


def test_consistency_residual_decays_under_refinement():
    # coupling residual of the smooth-solution interpolant decays with h
    from igaplate.manufactured import get_case
    from igaplate.splines import basis_table
    from igaplate.coupling import PenaltyParameters
    case = get_case("sin_cos")
    prev = None
    base = two_patch_strip(p=2, nel=2, shift=True, case="sin_cos")
    for level in (1, 2, 3):
        model = base.refined(level)
        iface = detect_interfaces(model)[0]
        # alpha-free: measures the projected jumps of the interpolant itself
        par = PenaltyParameters(1.0, 1.0)
        K = assemble_coupling_terms(model, iface, par, "projected")
        # interpolate the exact solution per patch (Greville collocation)
        vecs = []
        for patch in model.patches:
            sp_ = patch.space
            g1, g2 = sp_.kv1.greville(), sp_.kv2.greville()
            A1 = np.zeros((g1.size, sp_.kv1.n))
            for i, (f, t) in enumerate(zip(*basis_table(sp_.kv1, g1))):
                A1[i, f: f + sp_.kv1.p + 1] = t[0]
            A2 = np.zeros((g2.size, sp_.kv2.n))
            for i, (f, t) in enumerate(zip(*basis_table(sp_.kv2, g2))):
                A2[i, f: f + sp_.kv2.p + 1] = t[0]
            xg = np.array([patch.geometry.eval((u, v), 0)[0]
                           for u in g1 for v in g2]).reshape(g1.size, g2.size, 2)
            vals = case.value(xg[..., 0], xg[..., 1])
            c = np.linalg.solve(A1, np.linalg.solve(A2, vals.T).T)
            vecs.append(c.ravel())
        v = np.concatenate(vecs)
        res = np.sqrt(v @ (K @ v))
        if prev is not None:
            assert res < prev / 1.8  # rate >= p-1 = 1
        prev = res
