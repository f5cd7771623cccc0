"""Pure-numpy twins of the kernels in ``_jit.py``."""
import numpy as np


def _offsets(radius):
    return [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
            if not (dy == 0 and dx == 0)]


def census_transform(img, radius):
    h, w = img.shape
    pad = np.pad(img, radius, mode="edge")
    out = np.zeros((h, w), dtype=np.uint64)
    for bit, (dy, dx) in enumerate(_offsets(radius)):
        nb = pad[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
        out |= (nb < img).astype(np.uint64) << np.uint64(bit)
    return out


def hamming(a, b):
    return np.bitwise_count(np.bitwise_xor(a, b)).astype(np.int64)


def stereo_cost_volume(left, right, codes_l, codes_r, max_disp, radius, sad_weight, nbits):
    h, w = left.shape
    n = (2 * radius + 1) ** 2
    cost = np.full((h, w, max_disp), np.inf)
    cols = np.arange(w)
    for k in range(max_disp):
        d = k + 1
        if d > w - 1:
            break
        absdiff = np.abs(left - right[:, np.maximum(cols - d, 0)])
        padx = np.pad(absdiff, ((0, 0), (radius, radius)), mode="edge")
        rowsum = np.zeros((h, w))
        for dx in range(-radius, radius + 1):
            rowsum += padx[:, radius + dx:radius + dx + w]
        pady = np.pad(rowsum, ((radius, radius), (0, 0)), mode="edge")
        sad = np.zeros((h, w))
        for dy in range(-radius, radius + 1):
            sad += pady[radius + dy:radius + dy + h]
        ham = hamming(codes_l[:, d:], codes_r[:, :w - d])
        cost[:, d:, k] = ham / nbits + sad_weight * sad[:, d:] / n
    return cost


def patch_match(codes_a, codes_b, pts_v, pts_u, search_radius, patch_radius):
    h, w = codes_a.shape
    n = pts_v.size
    best_cost = np.full(n, np.int64(1) << np.int64(62))
    best_dv = np.zeros(n, dtype=np.int64)
    best_du = np.zeros(n, dtype=np.int64)
    total = np.zeros(n, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    pr = range(-patch_radius, patch_radius + 1)
    for dv in range(-search_radius, search_radius + 1):
        tv = pts_v + dv
        for du in range(-search_radius, search_radius + 1):
            tu = pts_u + du
            inside = (tv >= 0) & (tv <= h - 1) & (tu >= 0) & (tu <= w - 1)
            c = np.zeros(n, dtype=np.int64)
            for oy in pr:
                ay = np.clip(pts_v + oy, 0, h - 1)
                by = np.clip(tv + oy, 0, h - 1)
                for ox in pr:
                    a = codes_a[ay, np.clip(pts_u + ox, 0, w - 1)]
                    b = codes_b[by, np.clip(tu + ox, 0, w - 1)]
                    c += hamming(a, b)
            total += np.where(inside, c, 0)
            count += inside
            better = inside & (c < best_cost)
            best_cost = np.where(better, c, best_cost)
            best_dv = np.where(better, dv, best_dv)
            best_du = np.where(better, du, best_du)
    return best_dv, best_du, best_cost, total / count


def zbuffer_winners(target, z, ok, size, tol):
    zmin = np.full(size, np.inf)
    np.minimum.at(zmin, target[ok], z[ok])
    cand = ok & (z <= zmin[target] + tol)
    src = np.arange(target.size, dtype=np.int64)
    big = np.iinfo(np.int64).max
    win = np.full(size, big, dtype=np.int64)
    np.minimum.at(win, target[cand], src[cand])
    win[win == big] = -1
    return win
