"""Closed-form manufactured solutions driving the convergence studies.

Each case provides the exact deflection with derivatives to second order and
the body load g = D * biharmonic(u) that makes it the solution of the plate
problem; boundary data (trace and normal rotation) follow from the same
closed forms.
"""

import numpy as np

from .errors import ModelError

__all__ = ["ManufacturedCase", "get_case", "CASES"]


class ManufacturedCase:
    """Bundle of callables (value, grad, hess, biharmonic) on physical (x, y).

    ``load(x, y, D)`` returns g = D * biharmonic(u); all callables accept
    numpy arrays and broadcast.
    """

    def __init__(self, name, value, grad, hess, biharmonic):
        self.name = name
        self.value = value
        self.grad = grad
        self.hess = hess
        self.biharmonic = biharmonic

    def load(self, x, y, D):
        return D * self.biharmonic(x, y)

    def verify(self, points, tol=5e-3):
        """Finite-difference sanity check of grad/hess/biharmonic at ``points``.

        Returns the worst relative deviation found (useful in tests)."""
        h = 1e-3
        worst = 0.0
        for x, y in points:
            g = self.grad(x, y)
            fd = np.array([
                (self.value(x + h, y) - self.value(x - h, y)) / (2 * h),
                (self.value(x, y + h) - self.value(x, y - h)) / (2 * h),
            ])
            scale = max(1.0, float(np.max(np.abs(g))))
            worst = max(worst, float(np.max(np.abs(fd - g))) / scale)
            H = self.hess(x, y)
            gxp = self.grad(x + h, y)
            gxm = self.grad(x - h, y)
            gyp = self.grad(x, y + h)
            gym = self.grad(x, y - h)
            fdH = np.column_stack([(gxp - gxm) / (2 * h), (gyp - gym) / (2 * h)])
            scale = max(1.0, float(np.max(np.abs(H))))
            worst = max(worst, float(np.max(np.abs(fdH - H))) / scale)
            # biharmonic via 4th-order central differences of the laplacian
            def lap(a, b):
                hh = self.hess(a, b)
                return hh[0, 0] + hh[1, 1]
            fdb = ((lap(x + h, y) - 2 * lap(x, y) + lap(x - h, y)) / h ** 2
                   + (lap(x, y + h) - 2 * lap(x, y) + lap(x, y - h)) / h ** 2)
            scale = max(1.0, abs(self.biharmonic(x, y)))
            worst = max(worst, abs(fdb - self.biharmonic(x, y)) / scale)
        if worst > tol:
            raise ModelError(
                "manufactured case %r fails its derivative check (%.2e)"
                % (self.name, worst), "model:case")
        return worst


def _sin_cos():
    # u = sin(pi x) cos(pi x) = sin(2 pi x) / 2, independent of y
    w = 2.0 * np.pi

    def value(x, y):
        return 0.5 * np.sin(w * x) + 0.0 * y

    def grad(x, y):
        return np.array([0.5 * w * np.cos(w * x) + 0.0 * y, np.zeros(np.shape(x))])

    def hess(x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return np.array([[-0.5 * w ** 2 * np.sin(w * x) + z, z], [z, z]])

    def biharmonic(x, y):
        return 0.5 * w ** 4 * np.sin(w * x) + 0.0 * y

    return ManufacturedCase("sin_cos", value, grad, hess, biharmonic)


def _clamped_bubble():
    # u = (x(1-x) y(1-y))^2 on the unit square: u and du/dn vanish on the
    # boundary, so clamped data are exactly homogeneous
    def f(t):
        return t ** 2 * (1 - t) ** 2

    def f1(t):
        return 2 * t - 6 * t ** 2 + 4 * t ** 3

    def f2(t):
        return 2 - 12 * t + 12 * t ** 2

    def value(x, y):
        return f(x) * f(y)

    def grad(x, y):
        return np.array([f1(x) * f(y), f(x) * f1(y)])

    def hess(x, y):
        return np.array([[f2(x) * f(y), f1(x) * f1(y)],
                         [f1(x) * f1(y), f(x) * f2(y)]])

    def biharmonic(x, y):
        return 24.0 * (f(y) + f(x)) + 2.0 * f2(x) * f2(y)

    return ManufacturedCase("clamped_bubble", value, grad, hess, biharmonic)


def _quadratic_x():
    # u = x^2 / 2: representable exactly for p >= 2, biharmonic-free
    def value(x, y):
        return 0.5 * x ** 2 + 0.0 * y

    def grad(x, y):
        return np.array([x + 0.0 * y, np.zeros(np.broadcast(x, y).shape)])

    def hess(x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return np.array([[np.ones(np.broadcast(x, y).shape), z], [z, z]])

    def biharmonic(x, y):
        return np.zeros(np.broadcast(x, y).shape)

    return ManufacturedCase("quadratic_x", value, grad, hess, biharmonic)


CASES = {
    "sin_cos": _sin_cos,
    "clamped_bubble": _clamped_bubble,
    "quadratic_x": _quadratic_x,
}


def get_case(name):
    try:
        return CASES[name]()
    except KeyError:
        raise ModelError("unknown manufactured case %r (have: %s)"
                         % (name, ", ".join(sorted(CASES))), "model:case") from None
