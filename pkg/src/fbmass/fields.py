"""Scalar and symmetric-tensor fields that can report their 2-jet at any point.

Every field exposes ``jet(x)`` for points of shape ``(..., n)``:

* scalars return ``(value, grad, hess)`` with shapes ``(...)``, ``(..., n)``, ``(..., n, n)``;
* tensors return ``(T, dT, ddT)`` with ``dT[..., k, i, j] = d_k T_ij`` and
  ``ddT[..., k, l, i, j] = d_k d_l T_ij``.

Jets accept complex input so they can be differentiated by complex step.
"""
from __future__ import annotations

import numpy as np
import sympy


def coordinate_symbols(n: int):
    return sympy.symbols(" ".join(f"x{i}" for i in range(1, n + 1)), real=True)


def _broadcast(values, shape, dtype):
    out = np.empty(shape + (len(values),), dtype=dtype)
    for k, v in enumerate(values):
        out[..., k] = v
    return out


class _SympyJet:
    """Lambdified value/first/second derivatives of a list of expressions."""

    def __init__(self, exprs, syms):
        n = len(syms)
        exprs = [sympy.sympify(e) for e in exprs]
        first = [sympy.diff(e, s) for s in syms for e in exprs]
        second = [sympy.diff(e, s, t) for s in syms for t in syms for e in exprs]
        self.m, self.n = len(exprs), n
        self._fn = sympy.lambdify(syms, exprs + first + second, modules="numpy", cse=True)

    def __call__(self, x):
        x = np.asarray(x)
        dtype = np.result_type(x, float)
        shape = x.shape[:-1]
        vals = _broadcast(self._fn(*np.moveaxis(x, -1, 0)), shape, dtype)
        m, n = self.m, self.n
        v = vals[..., :m]
        d1 = vals[..., m:m + n * m].reshape(shape + (n, m))
        d2 = vals[..., m + n * m:].reshape(shape + (n, n, m))
        return v, d1, d2


class ScalarField:
    """Base class; subclasses implement :meth:`jet`."""

    n: int

    def jet(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.jet(x)[0]


class SymbolicScalar(ScalarField):
    """Scalar given as a sympy expression in ``x1 .. xn``."""

    def __init__(self, expr, n: int):
        self.n = n
        self.expr = sympy.sympify(expr)
        self._jet = _SympyJet([self.expr], coordinate_symbols(n))

    def jet(self, x):
        v, d1, d2 = self._jet(x)
        return v[..., 0], d1[..., 0], d2[..., 0]


class ConstantScalar(ScalarField):
    def __init__(self, value: float, n: int):
        self.value, self.n = value, n

    def jet(self, x):
        x = np.asarray(x)
        dtype = np.result_type(x, float)
        s = x.shape[:-1]
        return (np.full(s, self.value, dtype=dtype), np.zeros(s + (self.n,), dtype),
                np.zeros(s + (self.n, self.n), dtype))


class ProductScalar(ScalarField):
    """Pointwise product of two scalar fields."""

    def __init__(self, a: ScalarField, b: ScalarField):
        self.a, self.b, self.n = a, b, a.n

    def jet(self, x):
        u, du, ddu = self.a.jet(x)
        v, dv, ddv = self.b.jet(x)
        val = u * v
        grad = du * v[..., None] + u[..., None] * dv
        hess = (ddu * v[..., None, None] + u[..., None, None] * ddv
                + du[..., :, None] * dv[..., None, :] + dv[..., :, None] * du[..., None, :])
        return val, grad, hess


class SymbolicTensor:
    """Symmetric 2-tensor given by a sympy matrix in ``x1 .. xn``."""

    def __init__(self, matrix, n: int):
        self.n = n
        self.matrix = sympy.Matrix(matrix)
        if self.matrix.shape != (n, n) or self.matrix != self.matrix.T:
            raise ValueError("tensor must be a symmetric n x n matrix")
        self._jet = _SympyJet(list(self.matrix), coordinate_symbols(n))

    def jet(self, x):
        v, d1, d2 = self._jet(x)
        s = v.shape[:-1]
        n = self.n
        return v.reshape(s + (n, n)), d1.reshape(s + (n, n, n)), d2.reshape(s + (n, n, n, n))


class ScaledTensor:
    """``scalar * tensor`` for a scalar field and a tensor field."""

    def __init__(self, scalar: ScalarField, tensor):
        self.scalar, self.tensor, self.n = scalar, tensor, tensor.n

    def jet(self, x):
        s, ds, dds = self.scalar.jet(x)
        t, dt, ddt = self.tensor.jet(x)
        val = s[..., None, None] * t
        d1 = ds[..., :, None, None] * t[..., None, :, :] + s[..., None, None, None] * dt
        d2 = (dds[..., :, :, None, None] * t[..., None, None, :, :]
              + ds[..., :, None, None, None] * dt[..., None, :, :, :]
              + ds[..., None, :, None, None] * dt[..., :, None, :, :]
              + s[..., None, None, None, None] * ddt)
        return val, d1, d2
