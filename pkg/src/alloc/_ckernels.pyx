# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror ``alloc._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

BACKEND = "cython"


cdef inline void _standard_one(const double[:, ::1] reports, const double[:, :, ::1] costs,
                               const double[::1] lam, Py_ssize_t t,
                               Py_ssize_t* win_out, double* pay_out) noexcept nogil:
    cdef Py_ssize_t K = reports.shape[1]
    cdef Py_ssize_t d = lam.shape[0]
    cdef Py_ssize_t i, j, win = 0
    cdef double best = 0.0, second = -INFINITY, s, adj, win_lamc = 0.0
    for i in range(K):
        s = 0.0
        for j in range(d):
            s += lam[j] * costs[t, i, j]
        adj = reports[t, i] - s
        if adj > best:
            second = best
            best = adj
            win = i + 1
            win_lamc = s
        elif adj > second:
            second = adj
    win_out[0] = win
    if win > 0:
        pay_out[0] = win_lamc + second
    else:
        pay_out[0] = 0.0


def resolve_rounds(const double[:, ::1] reports, const double[:, :, ::1] costs, const double[::1] lam,
                   explore, const cnp.int64_t[::1] explore_agent, const double[::1] price,
                   double[::1] cum, const double[::1] budget):
    cdef Py_ssize_t n = reports.shape[0]
    cdef Py_ssize_t d = lam.shape[0]
    cdef Py_ssize_t t, j, w
    cdef double p
    cdef bint ok
    cdef const cnp.uint8_t[::1] ex = np.ascontiguousarray(explore, dtype=np.uint8)
    win_arr = np.zeros(n, dtype=np.int64)
    pay_arr = np.zeros(n, dtype=np.float64)
    rej_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.int64_t[::1] win = win_arr
    cdef double[::1] pay = pay_arr
    cdef cnp.uint8_t[::1] rej = rej_arr
    with nogil:
        for t in range(n):
            if ex[t]:
                w = explore_agent[t]
                if reports[t, w - 1] >= price[t]:
                    p = price[t]
                else:
                    w = 0
                    p = 0.0
            else:
                _standard_one(reports, costs, lam, t, &w, &p)
            if w > 0:
                ok = True
                for j in range(d):
                    if cum[j] + costs[t, w - 1, j] > budget[j]:
                        ok = False
                        break
                if ok:
                    for j in range(d):
                        cum[j] += costs[t, w - 1, j]
                else:
                    w = 0
                    p = 0.0
                    rej[t] = 1
            win[t] = w
            pay[t] = p
    return win_arr, pay_arr, rej_arr


def resolve_vanilla(const double[:, ::1] reports, const double[:, :, ::1] costs, double[::1] lam,
                    const double[::1] rho, double eta, double[::1] cum, const double[::1] budget):
    cdef Py_ssize_t n = reports.shape[0]
    cdef Py_ssize_t d = lam.shape[0]
    cdef Py_ssize_t t, j, w
    cdef double p, cj, x, up
    cdef bint ok
    win_arr = np.zeros(n, dtype=np.int64)
    pay_arr = np.zeros(n, dtype=np.float64)
    rej_arr = np.zeros(n, dtype=np.uint8)
    used_arr = np.empty((n, d), dtype=np.float64)
    cdef cnp.int64_t[::1] win = win_arr
    cdef double[::1] pay = pay_arr
    cdef cnp.uint8_t[::1] rej = rej_arr
    cdef double[:, ::1] used = used_arr
    with nogil:
        for t in range(n):
            for j in range(d):
                used[t, j] = lam[j]
            _standard_one(reports, costs, lam, t, &w, &p)
            if w > 0:
                ok = True
                for j in range(d):
                    if cum[j] + costs[t, w - 1, j] > budget[j]:
                        ok = False
                        break
                if ok:
                    for j in range(d):
                        cum[j] += costs[t, w - 1, j]
                else:
                    w = 0
                    p = 0.0
                    rej[t] = 1
            win[t] = w
            pay[t] = p
            for j in range(d):
                cj = costs[t, w - 1, j] if w > 0 else 0.0
                x = lam[j] - eta * (rho[j] - cj)
                up = 1.0 / rho[j]
                if x < 0.0:
                    x = 0.0
                if x > up:
                    x = up
                lam[j] = x
    return win_arr, pay_arr, rej_arr, used_arr


def predicted_means(lams, const double[:, ::1] reports, const double[:, :, ::1] costs,
                    const double[::1] rho):
    cdef const double[:, ::1] L = np.ascontiguousarray(np.atleast_2d(lams), dtype=np.float64)
    cdef Py_ssize_t M = L.shape[0], d = L.shape[1]
    cdef Py_ssize_t n = reports.shape[0], K = reports.shape[1]
    cdef Py_ssize_t m, t, i, j, win
    cdef double best, s, adj
    out_arr = np.zeros((M, d), dtype=np.float64)
    if n == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    total_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] total = total_arr
    with nogil:
        for m in range(M):
            for j in range(d):
                total[j] = 0.0
            for t in range(n):
                best = 0.0
                win = 0
                for i in range(K):
                    s = 0.0
                    for j in range(d):
                        s += L[m, j] * costs[t, i, j]
                    adj = reports[t, i] - s
                    if adj > best:
                        best = adj
                        win = i + 1
                for j in range(d):
                    if win > 0:
                        total[j] += costs[t, win - 1, j]
                    else:
                        total[j] += 0.0
            for j in range(d):
                out[m, j] = rho[j] - total[j] / n
    return out_arr


def enumerate_offline(const double[:, ::1] values, const double[:, :, ::1] costs, const double[::1] budget):
    cdef Py_ssize_t T = values.shape[0], K = values.shape[1], d = costs.shape[2]
    cdef Py_ssize_t k, j, pos
    cdef bint feas
    digits_arr = np.zeros(T, dtype=np.int64)
    best_arr = np.zeros(T, dtype=np.int64)
    # prefix sums over rounds: row k holds the sum of rounds < k
    pw_arr = np.zeros(T + 1, dtype=np.float64)
    pc_arr = np.zeros((T + 1, d), dtype=np.float64)
    cdef cnp.int64_t[::1] digits = digits_arr
    cdef cnp.int64_t[::1] best_alloc = best_arr
    cdef double[::1] pw = pw_arr
    cdef double[:, ::1] pc = pc_arr
    cdef double best = -INFINITY
    cdef Py_ssize_t start = 0
    with nogil:
        while True:
            for k in range(start, T):
                if digits[k] > 0:
                    pw[k + 1] = pw[k] + values[k, digits[k] - 1]
                    for j in range(d):
                        pc[k + 1, j] = pc[k, j] + costs[k, digits[k] - 1, j]
                else:
                    pw[k + 1] = pw[k] + 0.0
                    for j in range(d):
                        pc[k + 1, j] = pc[k, j] + 0.0
            feas = True
            for j in range(d):
                if pc[T, j] > budget[j]:
                    feas = False
                    break
            if feas and pw[T] > best:
                best = pw[T]
                for k in range(T):
                    best_alloc[k] = digits[k]
            # odometer increment, last position fastest (lexicographic order)
            pos = T - 1
            while pos >= 0 and digits[pos] == K:
                digits[pos] = 0
                pos -= 1
            if pos < 0:
                break
            digits[pos] += 1
            start = pos
    return float(best), best_arr
