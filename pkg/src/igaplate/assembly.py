"""Per-patch Galerkin assembly for the Kirchhoff plate: bending/mass Gram
matrices, load vectors, clamped boundary handling, and stress recovery.

The bilinear form carries the Poisson-ratio split
    a(u, v) = int D [ nu * lap(u) lap(v) + (1 - nu) * hess(u) : hess(v) ]
which reduces to the pure-Hessian form for nu = 0. Physical second derivatives
are obtained from parametric ones through the exact second-order chain rule
using the Jacobian and the second derivatives of the geometry map.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError, ModelError
from .splines import TensorSpace, basis_table, gauss_rule

__all__ = [
    "SIDES",
    "PlateMaterial",
    "Patch",
    "PatchQuadrature",
    "flexural_rigidity",
    "assemble_grams",
    "stiffness_from_grams",
    "assemble_load",
    "assemble_line_load",
    "clamped_dof_set",
    "fit_clamped_values",
    "eval_solution",
    "bending_stress",
    "edge_context",
    "side_axis",
    "side_eta",
]

SIDES = ("west", "east", "south", "north")

_SIDE_AXIS = {"west": 1, "east": 1, "south": 0, "north": 0}
_SIDE_FIXED = {"west": 0.0, "east": 1.0, "south": 0.0, "north": 1.0}
_SIDE_PNORMAL = {"west": (-1.0, 0.0), "east": (1.0, 0.0),
                 "south": (0.0, -1.0), "north": (0.0, 1.0)}


def flexural_rigidity(E, t, nu):
    """D = E t^3 / (12 (1 - nu^2))."""
    if E <= 0 or t <= 0:
        raise ModelError("E and t must be positive", "model:material")
    if not 0 <= nu < 0.5:
        raise ModelError("Poisson ratio must lie in [0, 0.5)", "model:material")
    return E * t ** 3 / (12.0 * (1.0 - nu ** 2))


@dataclass(frozen=True)
class PlateMaterial:
    """Plate material record; ``D`` is the derived flexural rigidity."""

    E: float
    t: float
    nu: float = 0.0

    def __post_init__(self):
        flexural_rigidity(self.E, self.t, self.nu)  # validates

    @property
    def D(self):
        return flexural_rigidity(self.E, self.t, self.nu)


@dataclass
class Patch:
    """One tensor-product patch: geometry map, solution space, side tags.

    Tags mark non-interface sides as 'clamped' or 'free'; interface sides are
    discovered geometrically and must not be tagged 'clamped'.
    """

    geometry: "object"
    space: TensorSpace
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.space.degrees) < 2:
            raise ModelError("solution space needs p >= 2 for H^2 conformity",
                             "model:patch")
        for side, tag in self.tags.items():
            if side not in SIDES or tag not in ("clamped", "free"):
                raise ModelError("bad boundary tag %r: %r" % (side, tag), "model:patch")

    @property
    def nquad(self):
        return max(self.space.degrees) + 1

    def clamped_sides(self):
        return [s for s in SIDES if self.tags.get(s) == "clamped"]

    def refined(self, levels=1):
        return Patch(self.geometry, self.space.refine(levels), dict(self.tags))


def side_axis(side):
    """Axis (0 or 1) along which the side runs."""
    return _SIDE_AXIS[side]

def side_eta(side, t):
    """Parametric point on a side for running coordinate(s) t."""
    t = np.asarray(t, dtype=float)
    fixed = np.full_like(t, _SIDE_FIXED[side])
    if _SIDE_AXIS[side] == 0:
        return np.stack([t, fixed], axis=-1)
    return np.stack([fixed, t], axis=-1)


def _inv2(J):
    """Inverse and determinant of stacked 2x2 matrices (..., 2, 2)."""
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1]
    inv[..., 0, 1] = -J[..., 0, 1]
    inv[..., 1, 0] = -J[..., 1, 0]
    inv[..., 1, 1] = J[..., 0, 0]
    return inv / det[..., None, None], det


class PatchQuadrature:
    """Tensor Gauss data for one patch: univariate basis tables, geometry
    tables, and the per-element physical-derivative factory shared by the
    assemblers and the error quadrature."""

    def __init__(self, patch, nq=None):
        self.patch = patch
        sp_ = patch.space
        self.nq = nq if nq is not None else patch.nquad
        self.p1, self.p2 = sp_.degrees
        self.ne1, self.ne2 = sp_.kv1.nspans, sp_.kv2.nspans
        self.pts1, self.w1 = gauss_rule(sp_.kv1, self.nq)
        self.pts2, self.w2 = gauss_rule(sp_.kv2, self.nq)
        f1, t1 = basis_table(sp_.kv1, self.pts1.ravel(), nderiv=2)
        f2, t2 = basis_table(sp_.kv2, self.pts2.ravel(), nderiv=2)
        self.first1 = f1.reshape(self.ne1, self.nq)[:, 0]
        self.first2 = f2.reshape(self.ne2, self.nq)[:, 0]
        self.tab1 = t1.reshape(self.ne1, self.nq, 3, self.p1 + 1)
        self.tab2 = t2.reshape(self.ne2, self.nq, 3, self.p2 + 1)
        geo = patch.geometry.eval_grid(self.pts1.ravel(), self.pts2.ravel(), nderiv=2)
        m1, m2 = self.ne1 * self.nq, self.ne2 * self.nq
        self.x = geo["x"].reshape(m1, m2, 2)
        J = geo["J"]
        self.Jinv, self.detJ = _inv2(J)
        self.H = geo["H"].reshape(m1, m2, 2, 2, 2)
        scale = max(np.max(np.abs(self.detJ)), 1e-300)
        if np.min(self.detJ) <= 1e-12 * scale:
            raise GeometryError("degenerate geometry map: |det J| not bounded away "
                                "from zero at a quadrature point")
        self.Jinv = self.Jinv.reshape(m1, m2, 2, 2)
        self.detJ = self.detJ.reshape(m1, m2)

    @property
    def nb(self):
        return (self.p1 + 1) * (self.p2 + 1)

    def element(self, e1, e2):
        """Physical basis data on element (e1, e2).

        Returns dict with 'w' (Q,) physical quadrature weights, 'x' (Q, 2),
        'val', 'gx', 'gy', 'hxx', 'hxy', 'hyy' of shape (Q, nb), and the
        global dof indices 'idx' (nb,).
        """
        nq = self.nq
        s1 = slice(e1 * nq, (e1 + 1) * nq)
        s2 = slice(e2 * nq, (e2 + 1) * nq)
        A = self.tab1[e1]
        B = self.tab2[e2]
        Q = nq * nq

        def outer(d1, d2):
            return np.einsum("qi,rj->qrij", A[:, d1, :], B[:, d2, :]).reshape(Q, self.nb)

        val = outer(0, 0)
        du, dv = outer(1, 0), outer(0, 1)
        duu, duv, dvv = outer(2, 0), outer(1, 1), outer(0, 2)

        Ji = self.Jinv[s1, s2].reshape(Q, 2, 2)
        det = self.detJ[s1, s2].reshape(Q)
        Hg = self.H[s1, s2].reshape(Q, 2, 2, 2)

        # physical gradient: grad_x b = J^{-T} grad_eta b
        gx = Ji[:, 0, 0, None] * du + Ji[:, 1, 0, None] * dv
        gy = Ji[:, 0, 1, None] * du + Ji[:, 1, 1, None] * dv

        # parametric Hessian minus geometry curvature term
        m11 = duu - gx * Hg[:, 0, 0, 0, None] - gy * Hg[:, 1, 0, 0, None]
        m12 = duv - gx * Hg[:, 0, 0, 1, None] - gy * Hg[:, 1, 0, 1, None]
        m22 = dvv - gx * Hg[:, 0, 1, 1, None] - gy * Hg[:, 1, 1, 1, None]

        a, b, c, d = (Ji[:, 0, 0, None], Ji[:, 0, 1, None],
                      Ji[:, 1, 0, None], Ji[:, 1, 1, None])
        hxx = a * a * m11 + 2 * a * c * m12 + c * c * m22
        hxy = a * b * m11 + (a * d + b * c) * m12 + c * d * m22
        hyy = b * b * m11 + 2 * b * d * m12 + d * d * m22

        w = (self.w1[e1][:, None] * self.w2[e2][None, :]).reshape(Q) * np.abs(det)
        idx = self.patch.space.active_indices(self.first1[e1], self.first2[e2])
        return {"w": w, "x": self.x[s1, s2].reshape(Q, 2), "val": val,
                "gx": gx, "gy": gy, "hxx": hxx, "hxy": hxy, "hyy": hyy, "idx": idx}

    def elements(self):
        for e1 in range(self.ne1):
            for e2 in range(self.ne2):
                yield (e1, e2), self.element(e1, e2)


def assemble_grams(patch, quad=None):
    """Assemble the patch mass, gradient, Frobenius-Hessian, and Laplacian
    Gram matrices in one sweep.

    Returns dict of CSR matrices 'mass', 'grad', 'hess', 'lap' over the patch
    dofs; stiffness and the broken-H2 norm matrix are combinations of these.
    """
    quad = quad or PatchQuadrature(patch)
    n = patch.space.ndof
    nb = quad.nb
    nel = quad.ne1 * quad.ne2
    rows = np.empty(nel * nb * nb, dtype=np.int64)
    cols = np.empty_like(rows)
    data = {k: np.empty(nel * nb * nb) for k in ("mass", "grad", "hess", "lap")}
    pos = 0
    for _, el in quad.elements():
        w = el["w"]

        def gram(xs):
            acc = 0.0
            for Xa, Xb, fac in xs:
                acc = acc + fac * (Xa * w[:, None]).T @ Xb
            return acc

        loc = {
            "mass": gram([(el["val"], el["val"], 1.0)]),
            "grad": gram([(el["gx"], el["gx"], 1.0), (el["gy"], el["gy"], 1.0)]),
            "hess": gram([(el["hxx"], el["hxx"], 1.0), (el["hxy"], el["hxy"], 2.0),
                          (el["hyy"], el["hyy"], 1.0)]),
        }
        lap = el["hxx"] + el["hyy"]
        loc["lap"] = (lap * w[:, None]).T @ lap
        idx = el["idx"]
        rows[pos: pos + nb * nb] = np.repeat(idx, nb)
        cols[pos: pos + nb * nb] = np.tile(idx, nb)
        for k in data:
            data[k][pos: pos + nb * nb] = loc[k].ravel()
        pos += nb * nb
    out = {}
    for k in data:
        M = sp.coo_matrix((data[k], (rows, cols)), shape=(n, n)).tocsr()
        out[k] = 0.5 * (M + M.T)  # symmetrize roundoff
    return out


def stiffness_from_grams(grams, material):
    """Bending stiffness D [ (1-nu) hess + nu lap ]."""
    nu = material.nu
    return material.D * ((1.0 - nu) * grams["hess"] + nu * grams["lap"])


def assemble_load(patch, g, quad=None):
    """Load vector f_i = int g b_i dOmega for a callable g(x, y)."""
    quad = quad or PatchQuadrature(patch)
    f = np.zeros(patch.space.ndof)
    for _, el in quad.elements():
        gv = g(el["x"][:, 0], el["x"][:, 1])
        f[el["idx"]] += el["val"].T @ (el["w"] * gv)
    return f


def edge_context(patch, side, ts):
    """Trace data along a patch side at running parameters ``ts``.

    Returns dict with physical points 'x' (m, 2), arc-length factor 'arc'
    (m,), outward unit normal 'n' (m, 2), trace values 'val' and physical
    gradients 'gx', 'gy' (m, nb), and active dof indices 'idx' (m, nb).
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    etas = side_eta(side, ts)
    sp_ = patch.space
    p1, p2 = sp_.degrees
    nb = (p1 + 1) * (p2 + 1)
    m = ts.size
    out = {"x": np.empty((m, 2)), "arc": np.empty(m), "n": np.empty((m, 2)),
           "val": np.empty((m, nb)), "gx": np.empty((m, nb)),
           "gy": np.empty((m, nb)), "idx": np.empty((m, nb), dtype=int)}
    run = side_axis(side)
    pn = np.asarray(_SIDE_PNORMAL[side])
    for q, eta in enumerate(etas):
        x, J, _ = patch.geometry.eval(eta, nderiv=1)
        Ji, det = _inv2(J)
        if abs(det) < 1e-14 * max(patch.geometry.diameter() ** 2, 1e-30):
            raise GeometryError("degenerate geometry on a patch side")
        out["x"][q] = x
        out["arc"][q] = np.linalg.norm(J[:, run])
        nvec = Ji.T @ pn
        out["n"][q] = nvec / np.linalg.norm(nvec)
        f1, t1 = basis_table(sp_.kv1, [eta[0]], nderiv=1)
        f2, t2 = basis_table(sp_.kv2, [eta[1]], nderiv=1)
        val = np.einsum("i,j->ij", t1[0, 0], t2[0, 0]).ravel()
        du = np.einsum("i,j->ij", t1[0, 1], t2[0, 0]).ravel()
        dv = np.einsum("i,j->ij", t1[0, 0], t2[0, 1]).ravel()
        out["val"][q] = val
        out["gx"][q] = Ji[0, 0] * du + Ji[1, 0] * dv
        out["gy"][q] = Ji[0, 1] * du + Ji[1, 1] * dv
        out["idx"][q] = sp_.active_indices(f1[0], f2[0])
    return out


def _edge_quadrature(patch, side, npts=None):
    kv = patch.space.kv2 if side_axis(side) == 1 else patch.space.kv1
    pts, w = gauss_rule(kv, npts or patch.nquad)
    return pts.ravel(), w.ravel()


def assemble_line_load(patch, side, q, quad_pts=None):
    """Edge load f_i = int q b_i ds on a tagged side; q is a constant or a
    callable q(x, y)."""
    ts, w = _edge_quadrature(patch, side, quad_pts)
    ctx = edge_context(patch, side, ts)
    qv = q(ctx["x"][:, 0], ctx["x"][:, 1]) if callable(q) else float(q) * np.ones(ts.size)
    f = np.zeros(patch.space.ndof)
    np.add.at(f, ctx["idx"], (w * ctx["arc"] * qv)[:, None] * ctx["val"])
    return f


def _side_layers(space, side, nlayers=2):
    n1, n2 = space.shape
    idx = []
    for layer in range(nlayers):
        if side == "west":
            i1, i2 = np.full(n2, layer), np.arange(n2)
        elif side == "east":
            i1, i2 = np.full(n2, n1 - 1 - layer), np.arange(n2)
        elif side == "south":
            i1, i2 = np.arange(n1), np.full(n1, layer)
        else:
            i1, i2 = np.arange(n1), np.full(n1, n2 - 1 - layer)
        idx.append(space.index(i1, i2))
    return np.unique(np.concatenate(idx))


def clamped_dof_set(patch):
    """Indices of the two control-variable layers adjacent to every clamped
    side (strong imposition of trace and normal-derivative trace)."""
    sides = patch.clamped_sides()
    if not sides:
        return np.empty(0, dtype=int)
    return np.unique(np.concatenate([_side_layers(patch.space, s) for s in sides]))


def fit_clamped_values(patch, case=None):
    """Prescribed values for the clamped dofs.

    Homogeneous case (no manufactured case): zeros. Otherwise a single
    least-squares fit over the constrained layers of
        sum_sides int (u_h - u_ex)^2 + h^2 (du_h/dn - du_ex/dn)^2 ds,
    which pins the trace through layer 0 and the rotation through layer 1.
    """
    idx = clamped_dof_set(patch)
    if idx.size == 0 or case is None:
        return idx, np.zeros(idx.size)
    pos = -np.ones(patch.space.ndof, dtype=int)
    pos[idx] = np.arange(idx.size)
    Q = np.zeros((idx.size, idx.size))
    rhs = np.zeros(idx.size)
    for side in patch.clamped_sides():
        ts, w = _edge_quadrature(patch, side)
        ctx = edge_context(patch, side, ts)
        ws = w * ctx["arc"]
        h = ws.sum() / (ts.size // patch.nquad)  # mean physical span length
        g0 = case.value(ctx["x"][:, 0], ctx["x"][:, 1])
        ge = case.grad(ctx["x"][:, 0], ctx["x"][:, 1])
        g1 = ge[0] * ctx["n"][:, 0] + ge[1] * ctx["n"][:, 1]
        gn = ctx["gx"] * ctx["n"][:, 0][:, None] + ctx["gy"] * ctx["n"][:, 1][:, None]
        for q in range(ts.size):
            loc = pos[ctx["idx"][q]]
            keep = loc >= 0
            lq = loc[keep]
            v = ctx["val"][q][keep]
            d = gn[q][keep]
            Q[np.ix_(lq, lq)] += ws[q] * (np.outer(v, v) + h ** 2 * np.outer(d, d))
            rhs[lq] += ws[q] * (g0[q] * v + h ** 2 * g1[q] * d)
    vals = np.linalg.solve(Q, rhs)
    return idx, vals


def eval_solution(patch, coeffs, eta, nderiv=2):
    """Physical value/gradient/Hessian of a coefficient field at a parametric
    point."""
    par = patch.space.eval_point(coeffs, eta, nderiv)
    out = {"val": par["val"]}
    if nderiv >= 1:
        _, J, Hg = patch.geometry.eval(eta, nderiv=min(nderiv, 2))
        Ji, _ = _inv2(J)
        gphys = Ji.T @ par["grad"]
        out["grad"] = gphys
    if nderiv >= 2:
        M = par["hess"] - gphys[0] * Hg[0] - gphys[1] * Hg[1]
        out["hess"] = Ji.T @ M @ Ji
    return out


def bending_stress(patch, coeffs, x, material, eta0=None):
    """Bending stress tensor m_ij = D (nu delta_ij lap(u) + (1 - nu) u_ij) at a
    physical point inside the patch image."""
    eta = patch.geometry.invert(x, eta0=eta0)
    H = eval_solution(patch, coeffs, eta, nderiv=2)["hess"]
    nu = material.nu
    return material.D * (nu * np.trace(H) * np.eye(2) + (1.0 - nu) * H)
