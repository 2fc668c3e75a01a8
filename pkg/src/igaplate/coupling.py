"""Interface machinery: detection of shared (possibly partial) patch sides,
intersection meshes, the reduced projection space, projected super-penalty
and plain penalty coupling terms, and cross-point constraints.

Jump conventions across an interface gamma between master patch k and slave
patch l:   [[u]] = u^k - u^l,   [[grad u]]_n = grad u^k . n^k + grad u^l . n^l
with outward unit normals.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .assembly import SIDES, edge_context, side_axis
from .errors import GeometryError, InterfaceError, ModelError
from .splines import (KnotVector, basis_table, reduce_knot_vector,
                      restrict_knot_vector)

__all__ = [
    "InterfaceDescriptor",
    "PenaltyParameters",
    "ProjectionOperator",
    "CrossPointConstraint",
    "detect_interfaces",
    "penalty_parameters",
    "scaled_penalty_parameters",
    "vanilla_penalty_parameters",
    "build_interface_quadrature",
    "build_projection",
    "assemble_coupling_terms",
    "cross_point_constraints",
    "build_constraint_matrix",
    "apply_constraints",
]

_GAUSS_SAMPLES = 33  # seed samples for edge point inversion


def _edge_curve(patch, side):
    """Callable t -> (x, dx/dt, d2x/dt2) along a patch side."""
    run = side_axis(side)

    def gamma(t):
        eta = _side_eta_scalar(side, t)
        x, J, H = patch.geometry.eval(eta, nderiv=2)
        return x, J[:, run], H[:, run, run]

    return gamma


def _side_eta_scalar(side, t):
    if side == "west":
        return (0.0, t)
    if side == "east":
        return (1.0, t)
    if side == "south":
        return (t, 0.0)
    return (t, 1.0)


def _project_to_edge(gamma, x, t0=None, tol=1e-10, scale=1.0):
    """Closest parameter on an edge curve to a physical point.

    Returns (t, distance). Newton on the stationarity equation of the squared
    distance, seeded by coarse sampling unless ``t0`` is given.
    """
    x = np.asarray(x, dtype=float)
    if t0 is None:
        ts = np.linspace(0.0, 1.0, _GAUSS_SAMPLES)
        d = [np.linalg.norm(gamma(t)[0] - x) for t in ts]
        t = ts[int(np.argmin(d))]
    else:
        t = float(t0)
    for _ in range(60):
        g, dg, d2g = gamma(t)
        r = g - x
        phi = r @ dg
        dphi = dg @ dg + r @ d2g
        if abs(dphi) < 1e-300:
            break
        step = phi / dphi
        t_new = min(1.0, max(0.0, t - step))
        if abs(t_new - t) < 1e-15:
            t = t_new
            break
        t = t_new
    dist = float(np.linalg.norm(gamma(t)[0] - x))
    return t, dist


def _edge_knot_vector(patch, side):
    return patch.space.kv2 if side_axis(side) == 1 else patch.space.kv1


@dataclass
class InterfaceDescriptor:
    """One coupling interface: master/slave sides, parametric sub-intervals,
    the slave-side interface knot vector and its reduced version, physical
    measure, and slave-side mesh size."""

    master: int
    master_side: str
    slave: int
    slave_side: str
    master_interval: tuple
    slave_interval: tuple
    reversed_orientation: bool
    knots: KnotVector          # interface knot vector (slave side, degree p)
    reduced_knots: KnotVector  # degree p-2 projection knot vector
    measure: float             # physical arc length
    h: float                   # max physical knot-span length, slave side

    def pair(self):
        return (self.master, self.slave)


@dataclass
class PenaltyParameters:
    alpha_defl: float
    alpha_rot: float
    beta: int = 0

    def __post_init__(self):
        if self.alpha_defl <= 0 or self.alpha_rot <= 0:
            raise ModelError("penalty parameters must be positive", "model:penalty")


def penalty_parameters(material, iface, beta=None):
    """Projected super-penalty parameters

        alpha_defl = meas(gamma)^(beta-1) E t / (h^beta (1 - nu^2))
        alpha_rot  = meas(gamma)^(beta-1) E t^3 / (12 h^beta (1 - nu^2))

    with the default exponent beta = p + 1.
    """
    p = iface.knots.p
    if beta is None:
        beta = p + 1
    if beta not in (p - 1, p, p + 1):
        raise ModelError("beta must be one of p-1, p, p+1", "model:penalty")
    E, t, nu = material.E, material.t, material.nu
    meas, h = iface.measure, iface.h
    common = meas ** (beta - 1) / (h ** beta * (1.0 - nu ** 2))
    return PenaltyParameters(common * E * t, common * E * t ** 3 / 12.0, beta)


def scaled_penalty_parameters(material, iface, delta=1e3):
    """Physically scaled plain-penalty parameters (delta E t / h and
    delta E t^3 / (12 h), user factor delta)."""
    E, t, nu = material.E, material.t, material.nu
    h = iface.h
    return PenaltyParameters(delta * E * t / (h * (1 - nu ** 2)),
                             delta * E * t ** 3 / (12 * h * (1 - nu ** 2)))


def vanilla_penalty_parameters(material, factor=1e4):
    """Classical penalty: alpha_defl = alpha_rot = factor * E."""
    return PenaltyParameters(factor * material.E, factor * material.E)


def _breakpoints_inside(kv, lo, hi, tol):
    bp = kv.breakpoints
    return [t for t in bp if lo + tol < t < hi - tol]


def _side_arc_lengths(patch, side, cuts):
    """Arc length of each [cuts[i], cuts[i+1]] piece of a side."""
    gamma = _edge_curve(patch, side)
    nodes, wts = np.polynomial.legendre.leggauss(6)
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        ts = 0.5 * (a + b) + 0.5 * (b - a) * nodes
        arc = sum(w * np.linalg.norm(gamma(t)[1]) for t, w in zip(ts, wts))
        out.append(0.5 * (b - a) * arc)
    return np.asarray(out)


def detect_interfaces(model, tol_rel=1e-8):
    """Discover all coupling interfaces of a multi-patch model.

    Two patch sides couple when they share a physical sub-curve of positive
    length (within tol_rel x bounding-box diagonal); a near-miss in
    (tol, 50 tol] raises a geometry-mismatch error naming the patch pair.
    The finer side (more interface breakpoints) becomes the slave; ties go to
    the lower patch id.
    """
    tol = tol_rel * max(model.bbox_diameter(), 1e-30)
    found = []
    if model.explicit_interfaces:
        pairs = [((e["patches"][0], e["sides"][0]), (e["patches"][1], e["sides"][1]))
                 for e in model.explicit_interfaces]
    else:
        all_sides = [(pid, side) for pid in range(model.npatches) for side in SIDES]
        pairs = [(a, b) for i, a in enumerate(all_sides) for b in all_sides[i + 1:]
                 if a[0] != b[0]]
    for (pa, sa), (pb, sb) in pairs:
        desc = _match_sides(model, pa, sa, pb, sb, tol)
        if desc is not None:
            found.append(desc)
    return found


def _edge_cp_bbox(patch, side):
    cp = patch.geometry.control_points
    edge = {"west": cp[0], "east": cp[-1], "south": cp[:, 0], "north": cp[:, -1]}[side]
    return edge.min(axis=0), edge.max(axis=0)


def _match_sides(model, pa, sa, pb, sb, tol):
    patch_a = model.patches[pa]
    patch_b = model.patches[pb]
    # control polygons bound the curves: cheap separation prefilter
    lo_a, hi_a = _edge_cp_bbox(patch_a, sa)
    lo_b, hi_b = _edge_cp_bbox(patch_b, sb)
    if np.any(lo_a > hi_b + 100 * tol) or np.any(lo_b > hi_a + 100 * tol):
        return None
    ga = _edge_curve(patch_a, sa)
    gb = _edge_curve(patch_b, sb)

    def snap(t):
        return 0.0 if t < 1e-12 else (1.0 if t > 1 - 1e-12 else t)

    cand_a, cand_b = [], []
    for tb in (0.0, 1.0):
        xb = gb(tb)[0]
        t, d = _project_to_edge(ga, xb)
        if d <= tol:
            cand_a.append(snap(t))
            cand_b.append(tb)
    for ta in (0.0, 1.0):
        xa = ga(ta)[0]
        s, d = _project_to_edge(gb, xa)
        if d <= tol:
            cand_a.append(ta)
            cand_b.append(snap(s))
    if len(cand_a) < 2:
        return None
    ia = (min(cand_a), max(cand_a))
    ib = (min(cand_b), max(cand_b))
    if ia[1] - ia[0] < 1e-9 or ib[1] - ib[0] < 1e-9:
        return None  # single shared corner, not an interface
    # verify the arcs actually coincide
    worst = 0.0
    for t in np.linspace(*ia, 7)[1:-1]:
        _, d = _project_to_edge(gb, ga(t)[0])
        worst = max(worst, d)
    if worst > tol:
        if worst <= 50 * tol:
            raise GeometryError(
                "patches %d and %d almost share an edge (gap %.3e beyond "
                "tolerance %.3e)" % (pa, pb, worst, tol))
        return None

    kv_a = _edge_knot_vector(patch_a, sa)
    kv_b = _edge_knot_vector(patch_b, sb)
    fine_a = len(_breakpoints_inside(kv_a, *ia, tol=1e-12))
    fine_b = len(_breakpoints_inside(kv_b, *ib, tol=1e-12))
    if fine_a == fine_b:
        slave_is_a = pa < pb
    else:
        slave_is_a = fine_a > fine_b
    if slave_is_a:
        sl, sl_side, sl_int, kv_sl = pa, sa, ia, kv_a
        ma, ma_side, ma_int, gma = pb, sb, ib, gb
        gsl = ga
    else:
        sl, sl_side, sl_int, kv_sl = pb, sb, ib, kv_b
        ma, ma_side, ma_int, gma = pa, sa, ia, ga
        gsl = gb

    s_lo, _ = _project_to_edge(gma, gsl(sl_int[0])[0])
    s_hi, _ = _project_to_edge(gma, gsl(sl_int[1])[0])
    knots = restrict_knot_vector(kv_sl, *sl_int)
    cuts = np.concatenate(([sl_int[0]], _breakpoints_inside(kv_sl, *sl_int, tol=1e-12),
                           [sl_int[1]]))
    arcs = _side_arc_lengths(model.patches[sl], sl_side, cuts)
    return InterfaceDescriptor(
        master=ma, master_side=ma_side, slave=sl, slave_side=sl_side,
        master_interval=(min(s_lo, s_hi), max(s_lo, s_hi)),
        slave_interval=sl_int, reversed_orientation=s_lo > s_hi,
        knots=knots, reduced_knots=reduce_knot_vector(knots),
        measure=float(arcs.sum()), h=float(arcs.max()))


@dataclass
class InterfaceQuadrature:
    """Quadrature data on the intersection mesh of one interface."""

    iface: InterfaceDescriptor
    t: np.ndarray            # slave-side running parameters (nq,)
    w: np.ndarray            # physical weights (arc factor included)
    red: np.ndarray          # reduced basis values (nq, n_red)
    slave_ctx: dict
    master_ctx: dict
    cells: np.ndarray        # intersection mesh breakpoints


def build_interface_quadrature(model, iface, npts=None):
    """Quadrature on the intersection mesh: cells are cut by the knot images
    of both sides so every cell lies inside one knot span per side."""
    slave = model.patches[iface.slave]
    master = model.patches[iface.master]
    g_sl = _edge_curve(slave, iface.slave_side)
    g_ma = _edge_curve(master, iface.master_side)
    lo, hi = iface.slave_interval
    span = hi - lo
    cuts = set([lo, hi])
    cuts.update(_breakpoints_inside(_edge_knot_vector(slave, iface.slave_side),
                                    lo, hi, tol=1e-12 * span))
    kv_ma = _edge_knot_vector(master, iface.master_side)
    m_lo, m_hi = iface.master_interval
    for s in _breakpoints_inside(kv_ma, m_lo, m_hi, tol=1e-12):
        x = g_ma(s)[0]
        t, d = _project_to_edge(g_sl, x)
        if d > 1e-6 * max(span, 1.0):
            raise GeometryError(
                "master breakpoint does not pull back onto the slave side "
                "(patches %d/%d)" % (iface.master, iface.slave))
        cuts.add(min(hi, max(lo, t)))
    cells = np.unique(np.asarray(sorted(cuts)))
    keep = np.concatenate(([True], np.diff(cells) > 1e-12 * span))
    cells = cells[keep]

    if npts is None:
        npts = max(slave.space.degrees + master.space.degrees) + 1
    nodes, wts = np.polynomial.legendre.leggauss(npts)
    mid = 0.5 * (cells[:-1] + cells[1:])
    half = 0.5 * (cells[1:] - cells[:-1])
    tq = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wq = (half[:, None] * wts[None, :]).ravel()

    slave_ctx = edge_context(slave, iface.slave_side, tq)
    # pull back through the master side, seeded by the linear interval map
    if iface.reversed_orientation:
        seed = m_hi + (tq - lo) / span * (m_lo - m_hi)
    else:
        seed = m_lo + (tq - lo) / span * (m_hi - m_lo)
    sq = np.empty_like(tq)
    for i, (t, s0) in enumerate(zip(tq, seed)):
        x = slave_ctx["x"][i]
        s, d = _project_to_edge(g_ma, x, t0=s0)
        if d > 1e-8 * max(model.bbox_diameter(), 1.0):
            s, d = _project_to_edge(g_ma, x)  # reseed globally before giving up
        if d > 1e-8 * max(model.bbox_diameter(), 1.0):
            raise GeometryError("interface quadrature point off the master side "
                                "(patches %d/%d)" % (iface.master, iface.slave))
        sq[i] = s
    master_ctx = edge_context(master, iface.master_side, sq)

    dots = np.sum(master_ctx["n"] * slave_ctx["n"], axis=1)
    if dots[0] > -0.9:
        raise GeometryError(
            "interface normals of patches %d/%d are misoriented (n_k . n_l = %.3f)"
            % (iface.master, iface.slave, dots[0]))

    n_red = iface.reduced_knots.n
    red = np.zeros((tq.size, n_red))
    first, tab = basis_table(iface.reduced_knots, tq)
    for i in range(tq.size):
        red[i, first[i]: first[i] + iface.reduced_knots.p + 1] = tab[i, 0]

    return InterfaceQuadrature(iface=iface, t=tq, w=wq * slave_ctx["arc"],
                               red=red, slave_ctx=slave_ctx,
                               master_ctx=master_ctx, cells=cells)


class ProjectionOperator:
    """L2 projection onto the reduced interface space.

    Holds the reduced-space mass matrix and the trace-moment matrices of both
    sides; projection coefficients are M_red^{-1} (moments).
    """

    def __init__(self, quad, offsets, ndof):
        iq = quad
        self.knots = iq.iface.reduced_knots
        self.M_red = (iq.red * iq.w[:, None]).T @ iq.red
        try:
            self._chol = scipy.linalg.cho_factor(self.M_red)
        except scipy.linalg.LinAlgError:
            raise InterfaceError("degenerate interface: reduced mass matrix "
                                 "is singular") from None
        n_red = self.knots.n
        self.G_master = np.zeros((n_red, ndof))
        self.G_slave = np.zeros((n_red, ndof))
        for side, G, off in (("master", self.G_master, offsets[iq.iface.master]),
                             ("slave", self.G_slave, offsets[iq.iface.slave])):
            ctx = iq.master_ctx if side == "master" else iq.slave_ctx
            for q in range(iq.t.size):
                G[:, off + ctx["idx"][q]] += np.outer(iq.red[q] * iq.w[q],
                                                      ctx["val"][q])

    def solve(self, rhs):
        return scipy.linalg.cho_solve(self._chol, rhs)

    def project_callable(self, f, quad):
        """Reduced coefficients of the projection of f(t) given on the slave
        running parameter."""
        moments = (quad.red * (quad.w * f(quad.t))[:, None]).sum(axis=0)
        return self.solve(moments)

    def eval_reduced(self, coeffs, ts):
        first, tab = basis_table(self.knots, ts)
        out = np.empty(len(np.atleast_1d(ts)))
        for i in range(out.size):
            out[i] = tab[i, 0] @ coeffs[first[i]: first[i] + self.knots.p + 1]
        return out


def build_projection(model, iface, quad=None):
    quad = quad or build_interface_quadrature(model, iface)
    return ProjectionOperator(quad, model.offsets(), model.ndof())


def _jump_rows(quad, offsets, ndof):
    """Moment matrices J_d (deflection jumps) and J_r (rotation jumps) against
    the reduced basis, over global dofs."""
    iq = quad
    n_red = iq.iface.reduced_knots.n
    J_d = np.zeros((n_red, ndof))
    J_r = np.zeros((n_red, ndof))
    off_m = offsets[iq.iface.master]
    off_s = offsets[iq.iface.slave]
    for q in range(iq.t.size):
        rw = iq.red[q] * iq.w[q]
        mi = off_m + iq.master_ctx["idx"][q]
        si = off_s + iq.slave_ctx["idx"][q]
        J_d[:, mi] += np.outer(rw, iq.master_ctx["val"][q])
        J_d[:, si] -= np.outer(rw, iq.slave_ctx["val"][q])
        gm = (iq.master_ctx["gx"][q] * iq.master_ctx["n"][q, 0]
              + iq.master_ctx["gy"][q] * iq.master_ctx["n"][q, 1])
        gs = (iq.slave_ctx["gx"][q] * iq.slave_ctx["n"][q, 0]
              + iq.slave_ctx["gy"][q] * iq.slave_ctx["n"][q, 1])
        J_r[:, mi] += np.outer(rw, gm)
        J_r[:, si] += np.outer(rw, gs)
    return J_d, J_r


def _direct_jump_grams(quad, offsets, ndof):
    """Plain (unprojected) penalty Grams int [[u]][[v]] and int [[du]][[dv]]."""
    iq = quad
    off_m = offsets[iq.iface.master]
    off_s = offsets[iq.iface.slave]
    nq = iq.t.size
    nb = iq.master_ctx["idx"].shape[1] + iq.slave_ctx["idx"].shape[1]
    rows = np.empty(nq * nb * nb, dtype=np.int64)
    cols = np.empty_like(rows)
    dat_d = np.empty(nq * nb * nb)
    dat_r = np.empty_like(dat_d)
    pos = 0
    for q in range(nq):
        mi = off_m + iq.master_ctx["idx"][q]
        si = off_s + iq.slave_ctx["idx"][q]
        idx = np.concatenate((mi, si))
        jump_d = np.concatenate((iq.master_ctx["val"][q], -iq.slave_ctx["val"][q]))
        gm = (iq.master_ctx["gx"][q] * iq.master_ctx["n"][q, 0]
              + iq.master_ctx["gy"][q] * iq.master_ctx["n"][q, 1])
        gs = (iq.slave_ctx["gx"][q] * iq.slave_ctx["n"][q, 0]
              + iq.slave_ctx["gy"][q] * iq.slave_ctx["n"][q, 1])
        jump_r = np.concatenate((gm, gs))
        rows[pos: pos + nb * nb] = np.repeat(idx, nb)
        cols[pos: pos + nb * nb] = np.tile(idx, nb)
        dat_d[pos: pos + nb * nb] = (iq.w[q] * np.outer(jump_d, jump_d)).ravel()
        dat_r[pos: pos + nb * nb] = (iq.w[q] * np.outer(jump_r, jump_r)).ravel()
        pos += nb * nb
    P_d = sp.coo_matrix((dat_d, (rows, cols)), shape=(ndof, ndof)).tocsr()
    P_r = sp.coo_matrix((dat_r, (rows, cols)), shape=(ndof, ndof)).tocsr()
    return P_d, P_r


def assemble_coupling_terms(model, iface, params, method="projected", quad=None):
    """Symmetric PSD coupling matrix of one interface over all model dofs.

    method 'projected' builds
        alpha_d J_d^T M_red^{-1} J_d + alpha_r J_r^T M_red^{-1} J_r
    (the projection identity collapses int Pi w Pi v to the weighted product);
    'direct' penalizes the raw jumps (vanilla / scaled penalty)."""
    quad = quad or build_interface_quadrature(model, iface)
    ndof = model.ndof()
    offsets = model.offsets()
    if method == "projected":
        proj = ProjectionOperator(quad, offsets, ndof)
        J_d, J_r = _jump_rows(quad, offsets, ndof)
        cols = np.unique(np.concatenate([np.nonzero(J_d.any(axis=0))[0],
                                         np.nonzero(J_r.any(axis=0))[0]]))
        block = np.zeros((cols.size, cols.size))
        for J, alpha in ((J_d, params.alpha_defl), (J_r, params.alpha_rot)):
            Ja = J[:, cols]
            block += alpha * (Ja.T @ proj.solve(Ja))
        rows = np.repeat(cols, cols.size)
        ccols = np.tile(cols, cols.size)
        K = sp.coo_matrix((block.ravel(), (rows, ccols)), shape=(ndof, ndof)).tocsr()
    elif method == "direct":
        P_d, P_r = _direct_jump_grams(quad, offsets, ndof)
        K = params.alpha_defl * P_d + params.alpha_rot * P_r
    else:
        raise ModelError("unknown coupling method %r" % method, "config:method")
    return 0.5 * (K + K.T)


@dataclass
class CrossPointConstraint:
    """C0 tie of the corner control variables meeting at a cross-point."""

    master: int
    slaves: list = field(default_factory=list)
    location: tuple = (0.0, 0.0)


def cross_point_constraints(model, interfaces, tol_rel=1e-8):
    """Cross-points: corner control-point locations shared by the closures of
    at least three interfaces; every incident patch corner dof is tied to one
    master dof."""
    tol = tol_rel * max(model.bbox_diameter(), 1e-30)
    offsets = model.offsets()
    corners = []  # (x, global dof)
    for pid, patch in enumerate(model.patches):
        n1, n2 = patch.space.shape
        for cu in (0, 1):
            for cv in (0, 1):
                x, _, _ = patch.geometry.eval((float(cu), float(cv)), nderiv=0)
                dof = offsets[pid] + patch.space.index(cu * (n1 - 1), cv * (n2 - 1))
                corners.append((x, int(dof), pid))
    groups = []
    used = [False] * len(corners)
    for i, (x, dof, pid) in enumerate(corners):
        if used[i]:
            continue
        group = [(dof, pid, x)]
        used[i] = True
        for j in range(i + 1, len(corners)):
            if not used[j] and np.linalg.norm(corners[j][0] - x) <= tol:
                group.append((corners[j][1], corners[j][2], corners[j][0]))
                used[j] = True
        if len(group) >= 2:
            groups.append(group)
    out = []
    for group in groups:
        x = group[0][2]
        touching = 0
        for iface in interfaces:
            gamma = _edge_curve(model.patches[iface.slave], iface.slave_side)
            t, d = _project_to_edge(gamma, x)
            lo, hi = iface.slave_interval
            if d <= tol and lo - 1e-9 <= t <= hi + 1e-9:
                touching += 1
        if touching >= 3:
            spread = max(np.linalg.norm(g[2] - x) for g in group)
            if spread > tol:
                raise GeometryError(
                    "cross-point corner control points at %s do not coincide "
                    "(spread %.3e)" % (x, spread))
            dofs = sorted(g[0] for g in group)
            out.append(CrossPointConstraint(master=dofs[0], slaves=dofs[1:],
                                            location=tuple(x)))
    return out


def build_constraint_matrix(ndof, constraints):
    """Rectangular map C (ndof x ndof - #slaves): slave rows point at their
    master's column, every other row is the identity."""
    slaves = {}
    for c in constraints:
        for s in c.slaves:
            if s in slaves or s == c.master:
                raise ModelError("dof %d appears in two constraints" % s,
                                 "model:constraints")
            slaves[s] = c.master
    keep = np.asarray([i for i in range(ndof) if i not in slaves], dtype=int)
    col_of = -np.ones(ndof, dtype=int)
    col_of[keep] = np.arange(keep.size)
    rows = np.arange(ndof)
    cols = np.asarray([col_of[slaves.get(i, i)] for i in range(ndof)])
    if np.any(cols < 0):
        raise ModelError("a constraint master is itself a slave", "model:constraints")
    C = sp.coo_matrix((np.ones(ndof), (rows, cols)), shape=(ndof, keep.size))
    return C.tocsr(), keep


def apply_constraints(A, f, C):
    """Congruence reduction A_hat = C^T A C, f_hat = C^T f."""
    if A.shape[0] != C.shape[0]:
        raise ModelError("constraint matrix does not match the system size "
                         "(%d vs %d)" % (C.shape[0], A.shape[0]), "model:constraints")
    return (C.T @ A @ C).tocsr(), C.T @ f
