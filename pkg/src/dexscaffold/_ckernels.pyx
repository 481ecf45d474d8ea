# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_pykernels.py`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, fmax, fmin

cnp.import_array()


def signed_distances(points, obj_pos, obj_rot, shapes, dims):
    cdef const double[:, :, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, :, ::1] OP = np.ascontiguousarray(obj_pos, dtype=np.float64)
    cdef const double[:, :, :, ::1] OR = np.ascontiguousarray(obj_rot, dtype=np.float64)
    cdef const long[::1] S = np.ascontiguousarray(shapes, dtype=np.int_)
    cdef const double[:, ::1] D = np.ascontiguousarray(dims, dtype=np.float64)
    cdef Py_ssize_t B = P.shape[0], NP = P.shape[1], O = S.shape[0]
    out_arr = np.empty((B, NP, O), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, p, o
    cdef double rx, ry, rz, lx, ly, lz, qx, qy, qz, r, h, m
    for b in range(B):
        for o in range(O):
            for p in range(NP):
                rx = P[b, p, 0] - OP[b, o, 0]
                ry = P[b, p, 1] - OP[b, o, 1]
                rz = P[b, p, 2] - OP[b, o, 2]
                lx = rx * OR[b, o, 0, 0] + ry * OR[b, o, 1, 0] + rz * OR[b, o, 2, 0]
                ly = rx * OR[b, o, 0, 1] + ry * OR[b, o, 1, 1] + rz * OR[b, o, 2, 1]
                lz = rx * OR[b, o, 0, 2] + ry * OR[b, o, 1, 2] + rz * OR[b, o, 2, 2]
                if S[o] == 0:
                    out[b, p, o] = sqrt(lx * lx + ly * ly + lz * lz) - D[o, 0]
                elif S[o] == 1:
                    qx = fabs(lx) - 0.5 * D[o, 0]
                    qy = fabs(ly) - 0.5 * D[o, 1]
                    qz = fabs(lz) - 0.5 * D[o, 2]
                    m = fmax(qx, fmax(qy, qz))
                    qx = fmax(qx, 0.0)
                    qy = fmax(qy, 0.0)
                    qz = fmax(qz, 0.0)
                    out[b, p, o] = sqrt(qx * qx + qy * qy + qz * qz) + fmin(m, 0.0)
                elif S[o] == 2:
                    r = sqrt(lx * lx + ly * ly) - D[o, 0]
                    h = fabs(lz) - 0.5 * D[o, 2]
                    qx = fmax(r, 0.0)
                    qy = fmax(h, 0.0)
                    out[b, p, o] = fmin(fmax(r, h), 0.0) + sqrt(qx * qx + qy * qy)
                else:
                    raise ValueError("unknown shape code")
    return out_arr


def gae(rewards, values, dones, last_values, double gamma, double lam):
    cdef const double[:, ::1] R = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const double[:, ::1] V = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] Dn = np.ascontiguousarray(dones, dtype=np.float64)
    cdef const double[::1] LV = np.ascontiguousarray(last_values, dtype=np.float64)
    cdef Py_ssize_t T = R.shape[0], B = R.shape[1], t, b
    adv_arr = np.zeros((T, B), dtype=np.float64)
    cdef double[:, ::1] A = adv_arr
    cdef double running, next_v, nonterminal, delta
    for b in range(B):
        running = 0.0
        next_v = LV[b]
        for t in range(T - 1, -1, -1):
            nonterminal = 1.0 - Dn[t, b]
            delta = R[t, b] + gamma * next_v * nonterminal - V[t, b]
            running = delta + gamma * lam * nonterminal * running
            A[t, b] = running
            next_v = V[t, b]
    return adv_arr


def zigzag_update(z, cnp.int8_t[::1] trend, double[::1] ext, double[::1] hi,
                  cnp.int32_t[::1] swings, double threshold):
    cdef const double[::1] Z = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t B = Z.shape[0], b
    cdef double v
    for b in range(B):
        v = Z[b]
        if trend[b] == 0:
            ext[b] = fmin(ext[b], v)
            hi[b] = fmax(hi[b], v)
            if v - ext[b] >= threshold:
                trend[b] = 1
                ext[b] = v
            elif hi[b] - v >= threshold:
                trend[b] = -1
                ext[b] = v
        elif trend[b] == 1:
            ext[b] = fmax(ext[b], v)
            if ext[b] - v >= threshold:
                swings[b] += 1
                trend[b] = -1
                ext[b] = v
        else:
            ext[b] = fmin(ext[b], v)
            if v - ext[b] >= threshold:
                trend[b] = 1
                ext[b] = v
