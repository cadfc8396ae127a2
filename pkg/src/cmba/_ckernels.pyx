# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: box/l1 projections and the swarm integrator step.

Signatures and results match ``cmba._pykernels``; see that module for the
reference semantics.
"""
import numpy as np

from libc.math cimport fabs, sqrt, fmax, fmin
from libc.stdlib cimport qsort, malloc, free


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<double*>a)[0]
    cdef double y = (<double*>b)[0]
    if x < y:
        return 1
    if x > y:
        return -1
    return 0


cdef void _clamp(const double[:] x, const double[:] lo, const double[:] hi,
                 double[:] out) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(x.shape[0]):
        out[j] = fmin(fmax(x[j], lo[j]), hi[j])


cdef int _proj_l1(const double[:] v, double radius, double[:] out) noexcept nogil:
    cdef Py_ssize_t n = v.shape[0], j
    cdef double total = 0.0, csum = 0.0, theta = 0.0, a
    for j in range(n):
        total += fabs(v[j])
    if total <= radius:
        for j in range(n):
            out[j] = v[j]
        return 0
    if radius <= 0.0:
        for j in range(n):
            out[j] = 0.0
        return 0
    cdef double* u = <double*>malloc(n * sizeof(double))
    if u == NULL:
        return -1
    for j in range(n):
        u[j] = fabs(v[j])
    qsort(u, n, sizeof(double), _cmp_desc)
    for j in range(n):
        csum += u[j]
        if u[j] - (csum - radius) / (j + 1) > 0.0:
            theta = (csum - radius) / (j + 1)
    free(u)
    for j in range(n):
        a = fabs(v[j]) - theta
        if a <= 0.0:
            out[j] = 0.0
        elif v[j] > 0.0:
            out[j] = a
        else:
            out[j] = -a
    return 0


def clamp(x, lo, hi):
    cdef double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(xv.shape[0])
    _clamp(xv, np.ascontiguousarray(lo, dtype=np.float64),
           np.ascontiguousarray(hi, dtype=np.float64), out)
    return out


def project_l1_ball(v, double radius):
    cdef double[:] vv = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty(vv.shape[0])
    if _proj_l1(vv, radius, out) != 0:
        raise MemoryError()
    return out


def dykstra_l1_box(x0, lo, hi, double radius, double tol=1e-10, int max_iter=100000):
    cdef double[:] xv0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[:] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t n = xv0.shape[0], j
    x_arr = np.array(xv0, dtype=np.float64)
    cdef double[:] x = x_arr
    cdef double[:] p = np.zeros(n)
    cdef double[:] q = np.zeros(n)
    cdef double[:] y = np.empty(n)
    cdef double[:] t = np.empty(n)
    cdef double[:] xn = np.empty(n)
    cdef double change = np.inf, d, pn
    cdef int it = 0
    while it < max_iter:
        it += 1
        change = 0.0
        for j in range(n):
            t[j] = x[j] + p[j]
        _clamp(t, lov, hiv, y)
        for j in range(n):
            pn = t[j] - y[j]
            d = pn - p[j]
            change += d * d
            p[j] = pn
            t[j] = y[j] + q[j]
        if _proj_l1(t, radius, xn) != 0:
            raise MemoryError()
        for j in range(n):
            pn = t[j] - xn[j]
            d = pn - q[j]
            change += d * d
            q[j] = pn
            d = xn[j] - x[j]
            change += d * d
            x[j] = xn[j]
        # x alone can repeat while p and q still move; stop on the whole state
        change = sqrt(change)
        if change <= tol:
            break
    # clamping toward zero never grows the l1 norm, so this keeps both constraints
    _clamp(x, lov, hiv, x)
    return x_arr, it, change


def swarm_step(pos, vel, goals, actions, double dt, double damping,
               double half_width, double v_max, double action_cost):
    cdef double[:, :] P = np.ascontiguousarray(pos, dtype=np.float64)
    cdef double[:, :] V = np.ascontiguousarray(vel, dtype=np.float64)
    cdef double[:, :] G = np.ascontiguousarray(goals, dtype=np.float64)
    cdef double[:, :] A = np.ascontiguousarray(actions, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], i, k
    new_pos = np.empty((n, 2))
    new_vel = np.empty((n, 2))
    cdef double[:, :] Pn = new_pos
    cdef double[:, :] Vn = new_vel
    cdef double progress = 0.0, penalty = 0.0, a, dx, dy, dist
    cdef bint touched = False
    for i in range(n):
        dx = G[i, 0] - P[i, 0]
        dy = G[i, 1] - P[i, 1]
        dist = sqrt(dx * dx + dy * dy)
        for k in range(2):
            a = fmin(fmax(A[i, k], -1.0), 1.0)
            penalty += a * a
            Vn[i, k] = fmin(fmax((1.0 - damping) * V[i, k] + dt * a, -v_max), v_max)
            Pn[i, k] = fmin(fmax(P[i, k] + dt * Vn[i, k], -half_width), half_width)
            if fabs(Pn[i, k]) >= half_width:
                touched = True
        if dist > 1e-6:
            progress += (Vn[i, 0] * dx + Vn[i, 1] * dy) / dist
    reward = progress / n - action_cost * penalty
    return new_pos, new_vel, reward, bool(touched)
