"""Univariate and tensor-product B-spline spaces, evaluation with derivatives,
knot refinement, and polynomial geometry maps.

Knot vectors are open (clamped): the first and last knots are repeated p+1
times, so the basis interpolates at the interval ends. Interior knots must be
simple (maximum continuity C^{p-1}); other multiplicities are rejected at
construction.
"""

import numpy as np

from .errors import GeometryError, ModelError

__all__ = [
    "KnotVector",
    "TensorSpace",
    "GeometryMap",
    "eval_basis",
    "basis_table",
    "reduce_knot_vector",
    "drop_end_internal_knots",
    "refine_uniform",
    "insert_knot",
    "make_open_knots",
    "gauss_rule",
    "univariate_grams",
]


class KnotVector:
    """An open knot vector together with its spline degree.

    Attributes:
        knots (ndarray): the non-decreasing knot sequence.
        p (int): the spline degree.
    """

    def __init__(self, knots, p):
        knots = np.asarray(knots, dtype=float)
        if p < 0:
            raise ModelError("degree must be non-negative, got %d" % p, "model:knots")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ModelError(
                "knot vector needs at least 2(p+1) = %d entries, got %d"
                % (2 * (p + 1), knots.size), "model:knots")
        if np.any(np.diff(knots) < 0):
            raise ModelError("knot vector must be non-decreasing", "model:knots")
        if not (np.allclose(knots[: p + 1], knots[0]) and np.allclose(knots[-p - 1:], knots[-1])):
            raise ModelError(
                "knot vector must be open: first and last knot repeated p+1 times",
                "model:knots")
        if knots[0] == knots[-1]:
            raise ModelError("knot vector spans an empty interval", "model:knots")
        interior = knots[p + 1: -p - 1]
        if interior.size:
            if interior[0] <= knots[0] or interior[-1] >= knots[-1]:
                raise ModelError("end knots repeated more than p+1 times", "model:knots")
            if np.any(np.diff(interior) == 0):
                raise ModelError(
                    "interior knots must be simple (maximum continuity)", "model:knots")
        self.knots = knots
        self.p = p

    @property
    def n(self):
        """Number of basis functions, |knots| - p - 1."""
        return self.knots.size - self.p - 1

    @property
    def domain(self):
        return (self.knots[0], self.knots[-1])

    @property
    def breakpoints(self):
        """Unique knots (the mesh)."""
        return np.unique(self.knots)

    @property
    def nspans(self):
        return self.breakpoints.size - 1

    def span_lengths(self):
        bp = self.breakpoints
        return bp[1:] - bp[:-1]

    def find_span(self, x):
        """Index i with knots[i] <= x < knots[i+1] (rightmost span at the
        right end), p <= i <= n-1."""
        a, b = self.domain
        if x < a or x > b:
            raise ValueError("point %r outside knot interval [%r, %r]" % (x, a, b))
        if x >= self.knots[self.n]:
            return self.n - 1
        return int(np.searchsorted(self.knots, x, side="right") - 1)

    def greville(self):
        """Greville abscissae (p consecutive-knot averages)."""
        if self.p == 0:
            bp = self.breakpoints
            return 0.5 * (bp[:-1] + bp[1:])
        g = np.array([self.knots[i + 1: i + self.p + 1].mean() for i in range(self.n)])
        return np.clip(g, *self.domain)

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.p == other.p
                and self.knots.size == other.knots.size
                and np.allclose(self.knots, other.knots))

    def __repr__(self):
        return "KnotVector(%s, p=%d)" % (np.array2string(self.knots, precision=4), self.p)


def make_open_knots(p, nspans, a=0.0, b=1.0):
    """Uniform open knot vector of degree p with ``nspans`` knot spans on [a, b]."""
    interior = np.linspace(a, b, nspans + 1)[1:-1]
    knots = np.concatenate((np.full(p + 1, a), interior, np.full(p + 1, b)))
    return KnotVector(knots, p)


def _ders_basis(knots, p, span, x, nderiv):
    """Values and derivatives of the p+1 basis functions active on ``span``.

    Standard triangular-table recursion with the derivative algorithm of the
    NURBS literature returning a (nderiv+1, p+1) table.
    """
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nderiv + 1, p + 1))
    ders[0, :] = ndu[:, p]
    nd = min(nderiv, p)
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, nd + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, nd + 1):
        ders[k, :] *= fac
        fac *= p - k
    return ders


def eval_basis(kv, x, nderiv=0):
    """Evaluate the p+1 nonzero basis functions at ``x``.

    Args:
        kv (KnotVector): the basis.
        x (float): point in the closed knot interval.
        nderiv (int): highest derivative order (rows beyond p are zero).

    Returns:
        (first, ders): index of the first active function and a
        (nderiv+1, p+1) table; ders[d, a] is the d-th derivative of basis
        function first+a at x.
    """
    span = kv.find_span(x)
    ders = _ders_basis(kv.knots, kv.p, span, x, nderiv)
    return span - kv.p, ders


def basis_table(kv, points, nderiv=0):
    """eval_basis at many points; returns (first (m,), tab (m, nderiv+1, p+1))."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    first = np.empty(points.size, dtype=int)
    tab = np.empty((points.size, nderiv + 1, kv.p + 1))
    for i, x in enumerate(points):
        first[i], tab[i] = eval_basis(kv, x, nderiv)
    return first, tab


def reduce_knot_vector(kv, drop=2):
    """Knot vector of degree p - drop obtained by removing the first and last
    ``drop`` knots; used with drop=2 to build the degree p-2 projection space."""
    if kv.p < drop:
        raise ModelError(
            "reduction needs degree >= %d, got p=%d" % (drop, kv.p), "model:knots")
    return KnotVector(kv.knots[drop:-drop], kv.p - drop)


def drop_end_internal_knots(kv):
    """Remove the first and the last interior knot (stability-test variant of
    the reduced space). A vector without interior knots is returned unchanged."""
    p = kv.p
    interior = kv.knots[p + 1: -p - 1]
    if interior.size == 0:
        return kv
    knots = np.concatenate((kv.knots[: p + 1], interior[1:-1], kv.knots[-p - 1:]))
    return KnotVector(knots, p)


def refine_uniform(kv, levels=1):
    """Bisect every nonempty knot span ``levels`` times."""
    knots = kv.knots
    for _ in range(levels):
        bp = np.unique(knots)
        mids = 0.5 * (bp[:-1] + bp[1:])
        knots = np.sort(np.concatenate((knots, mids)))
    return KnotVector(knots, kv.p)


def restrict_knot_vector(kv, a, b, tol=1e-12):
    """Open knot vector of the same degree on the sub-interval [a, b], keeping
    the interior knots of ``kv`` that fall strictly inside."""
    lo, hi = kv.domain
    if a < lo - tol or b > hi + tol or b - a <= tol:
        raise ModelError("invalid sub-interval [%r, %r]" % (a, b), "model:knots")
    interior = kv.knots[kv.p + 1: -kv.p - 1] if kv.p + 1 < kv.knots.size - kv.p - 1 else np.empty(0)
    interior = np.asarray([x for x in np.unique(interior) if a + tol < x < b - tol])
    knots = np.concatenate((np.full(kv.p + 1, a), interior, np.full(kv.p + 1, b)))
    return KnotVector(knots, kv.p)


def insert_knot(kv, coeffs, x):
    """Insert a single knot; returns (new kv, updated coefficients) leaving the
    spline function unchanged (standard single-knot insertion relation)."""
    p = kv.p
    k = kv.find_span(x)
    old = np.asarray(coeffs, dtype=float)
    new = np.empty(old.shape[0] + 1 if old.ndim == 1 else (old.shape[0] + 1,) + old.shape[1:])
    new[: k - p + 1] = old[: k - p + 1]
    for i in range(k - p + 1, k + 1):
        alpha = (x - kv.knots[i]) / (kv.knots[i + p] - kv.knots[i])
        new[i] = (1.0 - alpha) * old[i - 1] + alpha * old[i]
    new[k + 1:] = old[k:]
    knots = np.sort(np.append(kv.knots, x))
    return KnotVector(knots, p), new


def gauss_rule(kv, npts):
    """Per-span Gauss-Legendre rule: returns (points, weights), each of shape
    (nspans, npts)."""
    nodes, wts = np.polynomial.legendre.leggauss(npts)
    bp = kv.breakpoints
    mid = 0.5 * (bp[:-1] + bp[1:])
    half = 0.5 * (bp[1:] - bp[:-1])
    pts = mid[:, None] + half[:, None] * nodes[None, :]
    w = half[:, None] * wts[None, :]
    return pts, w


def univariate_grams(kv, npts=None, weight=None, weight_hess=None):
    """Univariate mass, first-derivative, and hessian Gram matrices.

    Args:
        kv: knot vector of the basis.
        npts: Gauss points per span (default p+1).
        weight: optional per-quadrature-point weight for the mass matrix,
            shape (nspans, npts).
        weight_hess: optional weight for the hessian matrix (defaults to
            ``weight``).

    Returns:
        dict with dense (n, n) arrays 'mass', 'grad', 'hess'.
    """
    if npts is None:
        npts = kv.p + 1
    pts, w = gauss_rule(kv, npts)
    if weight_hess is None:
        weight_hess = weight
    n = kv.n
    M = np.zeros((n, n))
    G = np.zeros((n, n))
    K = np.zeros((n, n))
    for s in range(pts.shape[0]):
        first, tab = basis_table(kv, pts[s], nderiv=2)
        wm = w[s] if weight is None else w[s] * weight[s]
        wk = w[s] if weight_hess is None else w[s] * weight_hess[s]
        f = first[0]
        sl = slice(f, f + kv.p + 1)
        M[sl, sl] += np.einsum("q,qi,qj->ij", wm, tab[:, 0, :], tab[:, 0, :])
        G[sl, sl] += np.einsum("q,qi,qj->ij", w[s], tab[:, 1, :], tab[:, 1, :])
        K[sl, sl] += np.einsum("q,qi,qj->ij", wk, tab[:, 2, :], tab[:, 2, :])
    return {"mass": M, "grad": G, "hess": K}


class TensorSpace:
    """Tensor product of two univariate spline spaces.

    Dofs are numbered in C order: global index = i1 * n2 + i2.
    """

    def __init__(self, kv1, kv2):
        self.kv1 = kv1
        self.kv2 = kv2

    @property
    def shape(self):
        return (self.kv1.n, self.kv2.n)

    @property
    def ndof(self):
        return self.kv1.n * self.kv2.n

    @property
    def degrees(self):
        return (self.kv1.p, self.kv2.p)

    def index(self, i1, i2):
        return np.asarray(i1) * self.kv2.n + np.asarray(i2)

    def refine(self, levels=1):
        return TensorSpace(refine_uniform(self.kv1, levels), refine_uniform(self.kv2, levels))

    def active_indices(self, first1, first2):
        """Global dof indices of the (p1+1)(p2+1) functions active on the spans
        starting at first1/first2, in C order."""
        i1 = first1 + np.arange(self.kv1.p + 1)
        i2 = first2 + np.arange(self.kv2.p + 1)
        return (i1[:, None] * self.kv2.n + i2[None, :]).ravel()

    def eval_point(self, coeffs, eta, nderiv=0):
        """Evaluate a coefficient field at a parametric point.

        Returns a dict with 'val' and, for nderiv >= 1, 'grad' (2,), and for
        nderiv >= 2, 'hess' (2, 2) -- all parametric derivatives.
        """
        c = np.asarray(coeffs).reshape(self.shape)
        f1, t1 = eval_basis(self.kv1, eta[0], nderiv)
        f2, t2 = eval_basis(self.kv2, eta[1], nderiv)
        block = c[f1: f1 + self.kv1.p + 1, f2: f2 + self.kv2.p + 1]
        out = {"val": t1[0] @ block @ t2[0]}
        if nderiv >= 1:
            out["grad"] = np.array([t1[1] @ block @ t2[0], t1[0] @ block @ t2[1]])
        if nderiv >= 2:
            out["hess"] = np.array([
                [t1[2] @ block @ t2[0], t1[1] @ block @ t2[1]],
                [t1[1] @ block @ t2[1], t1[0] @ block @ t2[2]],
            ])
        return out


class GeometryMap:
    """Polynomial B-spline geometry map F: [0,1]^2 -> R^2.

    Attributes:
        space (TensorSpace): the map's own basis.
        control_points (ndarray): shape (n1, n2, 2), physical coordinates.
    """

    def __init__(self, space, control_points):
        control_points = np.asarray(control_points, dtype=float)
        if control_points.shape != space.shape + (2,):
            raise ModelError(
                "control grid of shape %s does not match space %s"
                % (control_points.shape, space.shape), "model:patch")
        self.space = space
        self.control_points = control_points

    @classmethod
    def unit_square(cls, p=1, nspans=1):
        """Identity map of [0,1]^2 (Greville lattice control points)."""
        kv = make_open_knots(p, nspans)
        return cls.from_corners(kv, kv, [[0, 0], [1, 0], [0, 1], [1, 1]])

    @classmethod
    def from_corners(cls, kv1, kv2, corners):
        """Bilinear patch through corners [P00, P10, P01, P11] (affine in the
        Greville lattice, hence exact for straight-edged quadrilaterals)."""
        g1 = kv1.greville()
        g2 = kv2.greville()
        p00, p10, p01, p11 = [np.asarray(c, dtype=float) for c in corners]
        u = g1[:, None, None]
        v = g2[None, :, None]
        cp = ((1 - u) * (1 - v) * p00 + u * (1 - v) * p10
              + (1 - u) * v * p01 + u * v * p11)
        return cls(TensorSpace(kv1, kv2), cp)

    def eval(self, eta, nderiv=2):
        """Physical point, Jacobian, and second-derivative tensor at ``eta``.

        Returns:
            (x, J, H): x (2,), J (2, 2) with J[k, d] = dF_k/deta_d, and
            H (2, 2, 2) with H[k] the parametric Hessian of F_k (H is None
            when nderiv < 2).
        """
        cp = self.control_points
        sp = self.space
        f1, t1 = eval_basis(sp.kv1, eta[0], nderiv)
        f2, t2 = eval_basis(sp.kv2, eta[1], nderiv)
        block = cp[f1: f1 + sp.kv1.p + 1, f2: f2 + sp.kv2.p + 1]
        x = np.einsum("i,ijk,j->k", t1[0], block, t2[0])
        if nderiv < 1:
            return x, None, None
        J = np.stack([
            np.einsum("i,ijk,j->k", t1[1], block, t2[0]),
            np.einsum("i,ijk,j->k", t1[0], block, t2[1]),
        ], axis=1)
        if nderiv < 2:
            return x, J, None
        h11 = np.einsum("i,ijk,j->k", t1[2], block, t2[0])
        h12 = np.einsum("i,ijk,j->k", t1[1], block, t2[1])
        h22 = np.einsum("i,ijk,j->k", t1[0], block, t2[2])
        H = np.empty((2, 2, 2))
        H[:, 0, 0] = h11
        H[:, 0, 1] = H[:, 1, 0] = h12
        H[:, 1, 1] = h22
        return x, J, H

    def eval_grid(self, pts1, pts2, nderiv=2):
        """Vectorized eval on the tensor grid pts1 x pts2.

        Returns dict with 'x' (m1, m2, 2) and, per nderiv, 'J' (m1, m2, 2, 2)
        and 'H' (m1, m2, 2, 2, 2).
        """
        sp = self.space
        f1, t1 = basis_table(sp.kv1, pts1, nderiv)
        f2, t2 = basis_table(sp.kv2, pts2, nderiv)
        m1, m2 = len(pts1), len(pts2)
        p1, p2 = sp.kv1.p, sp.kv2.p
        # gather active control blocks per point pair via advanced indexing
        idx1 = f1[:, None] + np.arange(p1 + 1)[None, :]
        idx2 = f2[:, None] + np.arange(p2 + 1)[None, :]
        blocks = self.control_points[idx1[:, None, :, None], idx2[None, :, None, :], :]

        def contract(d1, d2):
            return np.einsum("ai,abijk,bj->abk", t1[:, d1, :], blocks, t2[:, d2, :])

        out = {"x": contract(0, 0)}
        if nderiv >= 1:
            out["J"] = np.stack([contract(1, 0), contract(0, 1)], axis=-1)
        if nderiv >= 2:
            h11 = contract(2, 0)
            h12 = contract(1, 1)
            h22 = contract(0, 2)
            H = np.empty((m1, m2, 2, 2, 2))
            H[..., 0, 0] = h11
            H[..., 0, 1] = H[..., 1, 0] = h12
            H[..., 1, 1] = h22
            out["H"] = H
        return out

    def diameter(self):
        cp = self.control_points.reshape(-1, 2)
        return float(np.linalg.norm(cp.max(axis=0) - cp.min(axis=0)))

    def invert(self, x, eta0=None, tol=1e-12, maxit=60):
        """Parametric preimage of a physical point by Newton iteration.

        Raises GeometryError when the point cannot be matched (outside the
        patch image or singular Jacobian).
        """
        x = np.asarray(x, dtype=float)
        scale = max(self.diameter(), 1.0)
        if eta0 is None:
            grid = np.linspace(0.0, 1.0, 9)
            vals = self.eval_grid(grid, grid, nderiv=0)["x"]
            d2 = np.sum((vals - x) ** 2, axis=-1)
            i, j = np.unravel_index(np.argmin(d2), d2.shape)
            eta = np.array([grid[i], grid[j]])
        else:
            eta = np.asarray(eta0, dtype=float).copy()
        for _ in range(maxit):
            fx, J, _ = self.eval(eta, nderiv=1)
            r = fx - x
            if np.linalg.norm(r) < tol * scale:
                return eta
            det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
            if abs(det) < 1e-14 * scale * scale:
                raise GeometryError("singular Jacobian while inverting the geometry map")
            step = np.array([J[1, 1] * r[0] - J[0, 1] * r[1],
                             -J[1, 0] * r[0] + J[0, 0] * r[1]]) / det
            eta = np.clip(eta - step, 0.0, 1.0)
        fx, _, _ = self.eval(eta, nderiv=0)
        if np.linalg.norm(fx - x) < 1e-9 * scale:
            return eta
        raise GeometryError("point %s is not on the patch (inversion failed)" % x)
