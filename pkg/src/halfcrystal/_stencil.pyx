# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled finite-support convolution kernels on periodic lattices.

Sites are flattened; ``nbr[s, x]`` is the flat index of ``x - offset[s]``.
"""
import numpy as np


def apply_stencil(const double[:, :, ::1] field,
                  const Py_ssize_t[:, ::1] nbr,
                  const double[:, :, ::1] mats):
    """out[b, x, k] = sum_s sum_l mats[s, k, l] * field[b, nbr[s, x], l]"""
    cdef Py_ssize_t nb = field.shape[0], nsites = field.shape[1], nin = field.shape[2]
    cdef Py_ssize_t ns = nbr.shape[0], nout = mats.shape[1]
    if mats.shape[0] != ns or mats.shape[2] != nin:
        raise ValueError("stencil matrices do not match field components")
    if nbr.shape[1] != nsites:
        raise ValueError("neighbour table does not match field sites")
    out = np.zeros((nb, nsites, nout))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, x, s, y, k, l
    cdef double acc
    with nogil:
        for b in range(nb):
            for x in range(nsites):
                for s in range(ns):
                    y = nbr[s, x]
                    for k in range(nout):
                        acc = 0.0
                        for l in range(nin):
                            acc = acc + mats[s, k, l] * field[b, y, l]
                        o[b, x, k] += acc
    return out


cdef void _force(const double[:, ::1] u, const Py_ssize_t[:, ::1] nbr,
                 const double[:, :, ::1] mats, double[:, ::1] f) noexcept nogil:
    # f = -V u
    cdef Py_ssize_t nsites = u.shape[0], n = u.shape[1], ns = nbr.shape[0]
    cdef Py_ssize_t x, s, y, k, l
    cdef double acc
    for x in range(nsites):
        for k in range(n):
            f[x, k] = 0.0
        for s in range(ns):
            y = nbr[s, x]
            for k in range(n):
                acc = 0.0
                for l in range(n):
                    acc = acc + mats[s, k, l] * u[y, l]
                f[x, k] -= acc


def verlet(const double[:, ::1] u0, const double[:, ::1] v0,
           const Py_ssize_t[:, ::1] nbr, const double[:, :, ::1] mats,
           double dt, Py_ssize_t nsteps):
    """Velocity-Verlet integration of u'' = -V u; returns (u, v) after nsteps."""
    u_arr = np.array(u0, dtype=np.float64, order="C")
    v_arr = np.array(v0, dtype=np.float64, order="C")
    f_arr = np.zeros_like(u_arr)
    cdef double[:, ::1] u = u_arr
    cdef double[:, ::1] v = v_arr
    cdef double[:, ::1] f = f_arr
    cdef Py_ssize_t nsites = u.shape[0], n = u.shape[1]
    cdef Py_ssize_t step, x, k
    cdef double half = 0.5 * dt
    with nogil:
        _force(u, nbr, mats, f)
        for step in range(nsteps):
            for x in range(nsites):
                for k in range(n):
                    v[x, k] += half * f[x, k]
                    u[x, k] += dt * v[x, k]
            _force(u, nbr, mats, f)
            for x in range(nsites):
                for k in range(n):
                    v[x, k] += half * f[x, k]
    return u_arr, v_arr
