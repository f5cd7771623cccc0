"""numba implementations of the per-pixel hot loops.

Every function here has a numpy twin in ``_np.py`` with identical
semantics; integer-valued outputs match bit for bit.
"""
import numpy as np
from numba import njit

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


@njit(cache=True, inline="always")
def _popcount(x):
    x = x - ((x >> np.uint64(1)) & _M1)
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x = (x + (x >> np.uint64(4))) & _M4
    return (x * _H01) >> np.uint64(56)


@njit(cache=True, inline="always")
def _clamp(i, n):
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


@njit(cache=True)
def _pad_edge(img, r):
    h, w = img.shape
    out = np.empty((h + 2 * r, w + 2 * r), dtype=img.dtype)
    for i in range(h + 2 * r):
        ii = _clamp(i - r, h)
        for j in range(w + 2 * r):
            out[i, j] = img[ii, _clamp(j - r, w)]
    return out


@njit(cache=True)
def census_transform(img, radius):
    h, w = img.shape
    pad = _pad_edge(img, radius)
    out = np.zeros((h, w), dtype=np.uint64)
    bit = np.uint64(0)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            for i in range(h):
                row = pad[i + radius + dy]
                for j in range(w):
                    out[i, j] |= np.uint64(row[j + radius + dx] < img[i, j]) << bit
            bit += np.uint64(1)
    return out


@njit(cache=True)
def hamming(a, b):
    out = np.empty(a.shape, dtype=np.int64)
    fa = a.ravel()
    fb = b.ravel()
    fo = out.ravel()
    for k in range(fa.size):
        fo[k] = _popcount(fa[k] ^ fb[k])
    return out


@njit(cache=True)
def stereo_cost_volume(left, right, codes_l, codes_r, max_disp, radius, sad_weight, nbits):
    h, w = left.shape
    n = (2 * radius + 1) * (2 * radius + 1)
    cost = np.full((h, w, max_disp), np.inf)
    absdiff = np.empty((h, w))
    rowsum = np.empty((h, w))
    for k in range(max_disp):
        d = k + 1
        if d > w - 1:
            break
        for i in range(h):
            for j in range(w):
                jr = j - d
                if jr < 0:
                    jr = 0
                absdiff[i, j] = abs(left[i, j] - right[i, jr])
        # separable box sum, replicate borders: x first, then y
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for dx in range(-radius, radius + 1):
                    acc += absdiff[i, _clamp(j + dx, w)]
                rowsum[i, j] = acc
        for i in range(h):
            for j in range(d, w):
                sad = 0.0
                for dy in range(-radius, radius + 1):
                    sad += rowsum[_clamp(i + dy, h), j]
                ham = _popcount(codes_l[i, j] ^ codes_r[i, j - d])
                cost[i, j, k] = ham / nbits + sad_weight * sad / n
    return cost


@njit(cache=True)
def patch_match(codes_a, codes_b, pts_v, pts_u, search_radius, patch_radius):
    h, w = codes_a.shape
    n = pts_v.size
    best_dv = np.zeros(n, dtype=np.int64)
    best_du = np.zeros(n, dtype=np.int64)
    best_cost = np.zeros(n, dtype=np.int64)
    mean_cost = np.zeros(n)
    for p in range(n):
        v = pts_v[p]
        u = pts_u[p]
        best = np.int64(1) << np.int64(62)
        total = 0
        count = 0
        for dv in range(-search_radius, search_radius + 1):
            tv = v + dv
            if tv < 0 or tv > h - 1:
                continue
            for du in range(-search_radius, search_radius + 1):
                tu = u + du
                if tu < 0 or tu > w - 1:
                    continue
                c = np.int64(0)
                for oy in range(-patch_radius, patch_radius + 1):
                    ay = _clamp(v + oy, h)
                    by = _clamp(tv + oy, h)
                    for ox in range(-patch_radius, patch_radius + 1):
                        a = codes_a[ay, _clamp(u + ox, w)]
                        b = codes_b[by, _clamp(tu + ox, w)]
                        c += np.int64(_popcount(a ^ b))
                total += c
                count += 1
                if c < best:
                    best = c
                    best_dv[p] = dv
                    best_du[p] = du
        best_cost[p] = best
        mean_cost[p] = total / count
    return best_dv, best_du, best_cost, mean_cost


@njit(cache=True)
def zbuffer_winners(target, z, ok, size, tol):
    zmin = np.full(size, np.inf)
    for s in range(target.size):
        if ok[s]:
            k = target[s]
            if z[s] < zmin[k]:
                zmin[k] = z[s]
    win = np.full(size, -1, dtype=np.int64)
    for s in range(target.size):
        if ok[s]:
            k = target[s]
            if win[k] == -1 and z[s] <= zmin[k] + tol:
                win[k] = s
    return win
