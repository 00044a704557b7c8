"""Compiled render kernels.

Everything here is ``njit``-compiled on plain arrays so it can run without
the GIL from a thread pool. The packed scene ``S`` is a tuple:

    (verts, norms, uvs, tris, tri_mat, tri_obj,
     node_min, node_max, node_left, node_right, node_start, node_count, prim,
     mat_f, mat_tex, tex_info, tex_data, lights, background)

Material rows: base r, g, b, opacity, metallic, roughness, specular.
Texture slots: base color, opacity, metallic, roughness (-1 = none).
Light rows: see ``LIGHT_*`` column constants below.
"""

from __future__ import annotations

import math

import numba
import numpy as np

jit = numba.njit(cache=True, nogil=True, error_model="numpy")

INF = np.inf
RAY_EPS = 1e-4  # shadow / continuation ray offset, meters
GAMMA3 = 3.0 * 2.0**-53 / (1.0 - 3.0 * 2.0**-53)
MIN_ROUGHNESS = 0.01
RR_START = 3
MAX_TRANSPARENT = 32
LEAF_SIZE = 4

KIND_POINT, KIND_SUN, KIND_SPOT, KIND_AREA = 0, 1, 2, 3
# light row columns
L_KIND, L_POS, L_DIR, L_INT, L_COL = 0, 1, 4, 7, 8
L_COS_OUTER, L_COS_INNER, L_EU, L_EV, L_AREA = 11, 12, 13, 16, 19
LIGHT_COLS = 20

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)


# ----------------------------------------------------------------------------
# counter-based RNG (mirrors synthface.rng)


@jit
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@jit
def fold(h, k):
    return mix64(h + _GOLDEN + np.uint64(k))


@jit
def to_unit(h):
    return np.float64(h >> _S11) * (1.0 / 9007199254740992.0)


@jit
def next_rand(state):
    """state = [path key, dimension counter] (uint64)."""
    u = to_unit(fold(state[0], state[1]))
    state[1] += np.uint64(1)
    return u


# ----------------------------------------------------------------------------
# small vector helpers on 3-tuples


@jit
def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@jit
def cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


@jit
def sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@jit
def add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


@jit
def scale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


@jit
def madd(a, b, s):
    return (a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s)


@jit
def normalize(a):
    n = math.sqrt(dot(a, a))
    if n == 0.0:
        return (0.0, 0.0, 0.0)
    return (a[0] / n, a[1] / n, a[2] / n)


@jit
def row3(arr, i, j):
    return (arr[i, j], arr[i, j + 1], arr[i, j + 2])


@jit
def luminance(c):
    return 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]


@jit
def basis(n):
    sign = 1.0 if n[2] >= 0.0 else -1.0
    a = -1.0 / (sign + n[2])
    b = n[0] * n[1] * a
    t = (1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0])
    bt = (b, sign + n[1] * n[1] * a, -n[1])
    return t, bt


@jit
def to_world(local, n):
    t, bt = basis(n)
    return (
        local[0] * t[0] + local[1] * bt[0] + local[2] * n[0],
        local[0] * t[1] + local[1] * bt[1] + local[2] * n[1],
        local[0] * t[2] + local[1] * bt[2] + local[2] * n[2],
    )


# ----------------------------------------------------------------------------
# BVH


@jit
def build_bvh(verts, tris):
    nt = tris.shape[0]
    cap = max(1, 2 * nt)
    node_min = np.empty((cap, 3))
    node_max = np.empty((cap, 3))
    node_left = np.full(cap, -1, np.int64)
    node_right = np.full(cap, -1, np.int64)
    node_start = np.zeros(cap, np.int64)
    node_count = np.zeros(cap, np.int64)
    prim = np.arange(nt).astype(np.int64)
    if nt == 0:
        return node_min[:0], node_max[:0], node_left[:0], node_right[:0], node_start[:0], node_count[:0], prim

    tmin = np.empty((nt, 3))
    tmax = np.empty((nt, 3))
    cent = np.empty((nt, 3))
    for i in range(nt):
        for k in range(3):
            a = verts[tris[i, 0], k]
            b = verts[tris[i, 1], k]
            c = verts[tris[i, 2], k]
            tmin[i, k] = min(a, b, c)
            tmax[i, k] = max(a, b, c)
            cent[i, k] = (a + b + c) / 3.0

    stack = np.empty((cap, 3), np.int64)  # node, start, end
    stack[0, 0], stack[0, 1], stack[0, 2] = 0, 0, nt
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node, s, e = stack[sp, 0], stack[sp, 1], stack[sp, 2]
        for k in range(3):
            lo, hi = INF, -INF
            for i in range(s, e):
                lo = min(lo, tmin[prim[i], k])
                hi = max(hi, tmax[prim[i], k])
            node_min[node, k] = lo
            node_max[node, k] = hi
        count = e - s
        if count <= LEAF_SIZE:
            node_start[node] = s
            node_count[node] = count
            continue
        axis, best = 0, -1.0
        for k in range(3):
            lo, hi = INF, -INF
            for i in range(s, e):
                lo = min(lo, cent[prim[i], k])
                hi = max(hi, cent[prim[i], k])
            if hi - lo > best:
                best, axis = hi - lo, k
        keys = np.empty(count)
        for i in range(count):
            keys[i] = cent[prim[s + i], axis]
        order = np.argsort(keys, kind="mergesort")
        seg = prim[s:e].copy()
        for i in range(count):
            prim[s + i] = seg[order[i]]
        mid = s + count // 2
        left, right = n_nodes, n_nodes + 1
        n_nodes += 2
        node_left[node], node_right[node] = left, right
        stack[sp, 0], stack[sp, 1], stack[sp, 2] = left, s, mid
        stack[sp + 1, 0], stack[sp + 1, 1], stack[sp + 1, 2] = right, mid, e
        sp += 2
    return (
        node_min[:n_nodes].copy(),
        node_max[:n_nodes].copy(),
        node_left[:n_nodes].copy(),
        node_right[:n_nodes].copy(),
        node_start[:n_nodes].copy(),
        node_count[:n_nodes].copy(),
        prim,
    )


@jit
def box_hit(bmin, bmax, i, o, inv, tmax):
    t0, t1 = 0.0, tmax
    for k in range(3):
        if math.isinf(inv[k]):
            # parallel to this slab: inside or out, boundary counts as inside
            if o[k] < bmin[i, k] or o[k] > bmax[i, k]:
                return False
            continue
        a = (bmin[i, k] - o[k]) * inv[k]
        b = (bmax[i, k] - o[k]) * inv[k]
        if a > b:
            a, b = b, a
        # widen the exit so rays grazing a box corner are not lost to rounding
        b *= 1.0 + 2.0 * GAMMA3
        if a > t0:
            t0 = a
        if b < t1:
            t1 = b
        if t0 > t1:
            return False
    return True


@jit
def tri_intersect(verts, tris, ti, o, kx, ky, kz, sx, sy, sz, tmin, tmax):
    """Watertight ray/triangle test. Returns (t, b1, b2) or (-1, 0, 0)."""
    i0, i1, i2 = tris[ti, 0], tris[ti, 1], tris[ti, 2]
    ax, ay, az = verts[i0, kx] - o[kx], verts[i0, ky] - o[ky], verts[i0, kz] - o[kz]
    bx, by, bz = verts[i1, kx] - o[kx], verts[i1, ky] - o[ky], verts[i1, kz] - o[kz]
    cx, cy, cz = verts[i2, kx] - o[kx], verts[i2, ky] - o[ky], verts[i2, kz] - o[kz]
    ax, ay = ax - sx * az, ay - sy * az
    bx, by = bx - sx * bz, by - sy * bz
    cx, cy = cx - sx * cz, cy - sy * cz
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return -1.0, 0.0, 0.0
    det = u + v + w
    if det == 0.0:
        return -1.0, 0.0, 0.0
    t = (u * sz * az + v * sz * bz + w * sz * cz) / det
    if not (t > tmin and t < tmax):
        return -1.0, 0.0, 0.0
    return t, v / det, w / det


@jit
def closest_hit(S, o, d, tmin, tmax):
    """Nearest hit in (tmin, tmax); ties broken by lowest triangle index.

    Returns (triangle index or -1, t, b1, b2)."""
    verts, tris = S[0], S[3]
    node_min, node_max, node_left, node_right, node_start, node_count, prim = (
        S[6], S[7], S[8], S[9], S[10], S[11], S[12],
    )
    best_tri, best_t, best_b1, best_b2 = -1, tmax, 0.0, 0.0
    if node_min.shape[0] == 0:
        return best_tri, best_t, best_b1, best_b2

    ad = (abs(d[0]), abs(d[1]), abs(d[2]))
    kz = 0
    if ad[1] > ad[kz]:
        kz = 1
    if ad[2] > ad[kz]:
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    sx = d[kx] / d[kz]
    sy = d[ky] / d[kz]
    sz = 1.0 / d[kz]
    inv = (1.0 / d[0], 1.0 / d[1], 1.0 / d[2])

    stack = np.empty(128, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        # <= keeps nodes whose entry equals the current best, needed for ties.
        if not box_hit(node_min, node_max, node, o, inv, best_t * (1.0 + 1e-12) + 1e-300):
            continue
        cnt = node_count[node]
        if cnt > 0:
            st = node_start[node]
            for k in range(st, st + cnt):
                ti = prim[k]
                t, b1, b2 = tri_intersect(verts, tris, ti, o, kx, ky, kz, sx, sy, sz, tmin, tmax)
                if t < 0.0:
                    continue
                if t < best_t or (t == best_t and (best_tri < 0 or ti < best_tri)):
                    best_tri, best_t, best_b1, best_b2 = ti, t, b1, b2
        else:
            stack[sp] = node_left[node]
            stack[sp + 1] = node_right[node]
            sp += 2
    return best_tri, best_t, best_b1, best_b2


# ----------------------------------------------------------------------------
# surface attributes and materials


@jit
def surface(S, tri, b1, b2, wo):
    """Hit position, geometric normal and shading normal (both facing wo), uv."""
    verts, norms, uvs, tris = S[0], S[1], S[2], S[3]
    i0, i1, i2 = tris[tri, 0], tris[tri, 1], tris[tri, 2]
    b0 = 1.0 - b1 - b2
    v0, v1, v2 = row3(verts, i0, 0), row3(verts, i1, 0), row3(verts, i2, 0)
    p = (
        b0 * v0[0] + b1 * v1[0] + b2 * v2[0],
        b0 * v0[1] + b1 * v1[1] + b2 * v2[1],
        b0 * v0[2] + b1 * v1[2] + b2 * v2[2],
    )
    ng = normalize(cross(sub(v1, v0), sub(v2, v0)))
    if dot(ng, wo) < 0.0:
        ng = scale(ng, -1.0)
    n0, n1, n2 = row3(norms, i0, 0), row3(norms, i1, 0), row3(norms, i2, 0)
    ns = normalize(
        (
            b0 * n0[0] + b1 * n1[0] + b2 * n2[0],
            b0 * n0[1] + b1 * n1[1] + b2 * n2[1],
            b0 * n0[2] + b1 * n1[2] + b2 * n2[2],
        )
    )
    if dot(ns, ng) < 0.0:
        ns = scale(ns, -1.0)
    if dot(ns, wo) <= 0.0 or dot(ns, ns) == 0.0:
        ns = ng
    u = b0 * uvs[i0, 0] + b1 * uvs[i1, 0] + b2 * uvs[i2, 0]
    v = b0 * uvs[i0, 1] + b1 * uvs[i1, 1] + b2 * uvs[i2, 1]
    return p, ng, ns, u, v


@jit
def sample_texture(tex_info, tex_data, t, u, v):
    """Bilinear, repeat-wrapped lookup; v = 0 is the bottom image row."""
    off, w, h = tex_info[t, 0], tex_info[t, 1], tex_info[t, 2]
    x = u * w - 0.5
    y = (1.0 - v) * h - 0.5
    x0 = math.floor(x)
    y0 = math.floor(y)
    fx, fy = x - x0, y - y0
    xi0, yi0 = int(x0) % w, int(y0) % h
    xi1, yi1 = (xi0 + 1) % w, (yi0 + 1) % h
    out = np.zeros(4)
    for c in range(4):
        a = tex_data[off + yi0 * w + xi0, c] * (1 - fx) + tex_data[off + yi0 * w + xi1, c] * fx
        b = tex_data[off + yi1 * w + xi0, c] * (1 - fx) + tex_data[off + yi1 * w + xi1, c] * fx
        out[c] = a * (1 - fy) + b * fy
    return out


@jit
def material_at(S, m, u, v):
    mat_f, mat_tex, tex_info, tex_data = S[13], S[14], S[15], S[16]
    r, g, b = mat_f[m, 0], mat_f[m, 1], mat_f[m, 2]
    alpha, metal, rough, spec = mat_f[m, 3], mat_f[m, 4], mat_f[m, 5], mat_f[m, 6]
    if mat_tex[m, 0] >= 0:
        tx = sample_texture(tex_info, tex_data, mat_tex[m, 0], u, v)
        r, g, b = r * tx[0], g * tx[1], b * tx[2]
    if mat_tex[m, 1] >= 0:
        alpha = alpha * sample_texture(tex_info, tex_data, mat_tex[m, 1], u, v)[0]
    if mat_tex[m, 2] >= 0:
        metal = sample_texture(tex_info, tex_data, mat_tex[m, 2], u, v)[0]
    if mat_tex[m, 3] >= 0:
        rough = max(MIN_ROUGHNESS, sample_texture(tex_info, tex_data, mat_tex[m, 3], u, v)[0])
    return (r, g, b), min(max(alpha, 0.0), 1.0), metal, rough, spec


# ----------------------------------------------------------------------------
# BSDF: Lambert + GGX/Smith/Schlick, metallic-roughness parameterization


@jit
def f0_color(base, metal, spec):
    k = 0.04 * spec * (1.0 - metal)
    return (k + base[0] * metal, k + base[1] * metal, k + base[2] * metal)


@jit
def ggx_d(a2, cos_h):
    c2 = cos_h * cos_h
    den = c2 * (a2 - 1.0) + 1.0
    return a2 / (math.pi * den * den)


@jit
def smith_g1(a2, c):
    return 2.0 * c / (c + math.sqrt(a2 + (1.0 - a2) * c * c))


@jit
def lobe_weights(base, metal, spec, cos_o):
    """Selection probability of the specular lobe (0 when it vanishes)."""
    f0 = f0_color(base, metal, spec)
    diff = (1.0 - metal) * luminance(base)
    if max(f0[0], f0[1], f0[2]) <= 0.0:
        return 0.0
    if diff <= 0.0:
        return 1.0
    fw = (1.0 - max(cos_o, 0.0)) ** 5
    sw = luminance(f0) * (1.0 - fw) + fw
    p = sw / (sw + diff)
    return min(max(p, 0.1), 0.9)


@jit
def bsdf_eval(base, metal, rough, spec, n, wi, wo):
    """Returns (diffuse f (3), specular f (3), diffuse pdf, specular pdf)."""
    ci = dot(n, wi)
    co = dot(n, wo)
    zero = (0.0, 0.0, 0.0)
    if ci <= 0.0 or co <= 0.0:
        return zero, zero, 0.0, 0.0
    kd = (1.0 - metal) / math.pi
    fd = (base[0] * kd, base[1] * kd, base[2] * kd)
    pdf_d = ci / math.pi
    f0 = f0_color(base, metal, spec)
    if max(f0[0], f0[1], f0[2]) <= 0.0:
        return fd, zero, pdf_d, 0.0
    h = normalize(add(wi, wo))
    ch = dot(n, h)
    oh = dot(wo, h)
    if ch <= 0.0 or oh <= 0.0:
        return fd, zero, pdf_d, 0.0
    a = rough * rough
    a2 = a * a
    d = ggx_d(a2, ch)
    g = smith_g1(a2, ci) * smith_g1(a2, co)
    fw = (1.0 - dot(wi, h)) ** 5
    k = d * g / (4.0 * ci * co)
    fs = (
        (f0[0] + (1.0 - f0[0]) * fw) * k,
        (f0[1] + (1.0 - f0[1]) * fw) * k,
        (f0[2] + (1.0 - f0[2]) * fw) * k,
    )
    pdf_s = d * ch / (4.0 * oh)
    return fd, fs, pdf_d, pdf_s


@jit
def sample_diffuse(n, u1, u2):
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    return to_world((r * math.cos(phi), r * math.sin(phi), math.sqrt(max(0.0, 1.0 - u1))), n)


@jit
def sample_specular(n, wo, rough, u1, u2):
    a = rough * rough
    tan2 = a * a * u1 / (1.0 - u1)
    cos_t = 1.0 / math.sqrt(1.0 + tan2)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * math.pi * u2
    h = to_world((sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t), n)
    return normalize(madd(scale(wo, -1.0), h, 2.0 * dot(wo, h)))


# ----------------------------------------------------------------------------
# lights


@jit
def smoothstep(x):
    x = min(max(x, 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


@jit
def sample_light(lights, li, p, u1, u2):
    """Returns (wi, distance, incident radiance (3), pdf, is_delta).

    For delta lights pdf is 1 and the radiance term already holds the
    irradiance normal to wi (I/d^2 or E)."""
    kind = int(lights[li, L_KIND])
    inten = lights[li, L_INT]
    col = row3(lights, li, L_COL)
    if kind == KIND_SUN:
        wi = scale(row3(lights, li, L_DIR), -1.0)
        return wi, INF, scale(col, inten), 1.0, True
    if kind == KIND_POINT or kind == KIND_SPOT:
        to = sub(row3(lights, li, L_POS), p)
        d2 = dot(to, to)
        dist = math.sqrt(d2)
        wi = scale(to, 1.0 / dist)
        e = inten / d2
        if kind == KIND_SPOT:
            c = -dot(wi, row3(lights, li, L_DIR))
            co, ci = lights[li, L_COS_OUTER], lights[li, L_COS_INNER]
            if ci > co:
                e *= smoothstep((c - co) / (ci - co))
            else:
                e *= 1.0 if c >= co else 0.0
        return wi, dist, scale(col, e), 1.0, True
    # area
    q = madd(madd(row3(lights, li, L_POS), row3(lights, li, L_EU), u1 - 0.5), row3(lights, li, L_EV), u2 - 0.5)
    to = sub(q, p)
    d2 = dot(to, to)
    dist = math.sqrt(d2)
    if dist == 0.0:
        return (0.0, 0.0, 1.0), 0.0, (0.0, 0.0, 0.0), 0.0, False
    wi = scale(to, 1.0 / dist)
    cos_l = -dot(wi, row3(lights, li, L_DIR))
    if cos_l <= 0.0:
        return wi, dist, (0.0, 0.0, 0.0), 0.0, False
    pdf = d2 / (lights[li, L_AREA] * cos_l)
    return wi, dist, scale(col, inten), pdf, False


@jit
def hit_area_light(lights, li, o, d, tmax):
    """Ray vs the emitting side of an area light. Returns (t, pdf) or (-1, 0)."""
    n = row3(lights, li, L_DIR)
    den = dot(d, n)
    if den >= 0.0:
        return -1.0, 0.0
    c = row3(lights, li, L_POS)
    t = dot(sub(c, o), n) / den
    if not (t > 0.0 and t < tmax):
        return -1.0, 0.0
    rel = sub(madd(o, d, t), c)
    eu, ev = row3(lights, li, L_EU), row3(lights, li, L_EV)
    a = dot(rel, eu) / dot(eu, eu)
    b = dot(rel, ev) / dot(ev, ev)
    if abs(a) > 0.5 or abs(b) > 0.5:
        return -1.0, 0.0
    return t, t * t / (lights[li, L_AREA] * -den)


@jit
def offset_origin(p, ng, d):
    if dot(ng, d) >= 0.0:
        return madd(p, ng, RAY_EPS)
    return madd(p, ng, -RAY_EPS)


@jit
def transmittance(S, p, ng, wi, dist):
    """Fraction of light passing straight through (partially) transparent
    surfaces between p and p + dist*wi."""
    tris, tri_mat, uvs = S[3], S[4], S[2]
    o = offset_origin(p, ng, wi)
    remaining = dist - RAY_EPS
    tr = 1.0
    for _ in range(MAX_TRANSPARENT):
        if remaining <= 0.0:
            return tr
        tri, t, b1, b2 = closest_hit(S, o, wi, 0.0, remaining)
        if tri < 0:
            return tr
        b0 = 1.0 - b1 - b2
        i0, i1, i2 = tris[tri, 0], tris[tri, 1], tris[tri, 2]
        u = b0 * uvs[i0, 0] + b1 * uvs[i1, 0] + b2 * uvs[i2, 0]
        v = b0 * uvs[i0, 1] + b1 * uvs[i1, 1] + b2 * uvs[i2, 1]
        alpha = material_at(S, tri_mat[tri], u, v)[1]
        tr *= 1.0 - alpha
        if tr <= 0.0:
            return 0.0
        o = madd(o, wi, t + RAY_EPS)
        remaining -= t + RAY_EPS
    return 0.0


# ----------------------------------------------------------------------------
# integrator


@jit
def emitted_along(S, o, d, tmax, prev_pdf, prev_nl):
    """Area-light radiance picked up on the segment [0, tmax), MIS-weighted
    against light sampling when prev_pdf > 0 (prev_pdf = 0 means the
    direction could not have been produced by light sampling)."""
    lights = S[17]
    r, g, b = 0.0, 0.0, 0.0
    for li in range(lights.shape[0]):
        if int(lights[li, L_KIND]) != KIND_AREA:
            continue
        t, pdf_l = hit_area_light(lights, li, o, d, tmax)
        if t < 0.0:
            continue
        w = 1.0
        if prev_pdf > 0.0:
            w = prev_pdf / (prev_pdf + prev_nl * pdf_l)
        e = lights[li, L_INT] * w
        r += lights[li, L_COL] * e
        g += lights[li, L_COL + 1] * e
        b += lights[li, L_COL + 2] * e
    return (r, g, b)


@jit
def direct_light(S, p, ng, ns, wo, base, alpha, metal, rough, spec, mode, p_s, n_area, state):
    """Next-event estimate of reflected light at a vertex.

    mode 0: no BSDF sampling follows, no MIS.
    mode 1: one-sample lobe mixture follows with density alpha*pdf_mix.
    mode 2: one branch per lobe follows; each lobe gets its own MIS weight.
    """
    lights = S[17]
    acc = (0.0, 0.0, 0.0)
    for li in range(lights.shape[0]):
        is_area = int(lights[li, L_KIND]) == KIND_AREA
        ns_l = n_area if is_area else 1
        for _ in range(ns_l):
            u1 = next_rand(state)
            u2 = next_rand(state)
            wi, dist, li_rad, pdf_l, delta = sample_light(lights, li, p, u1, u2)
            if pdf_l <= 0.0 or max(li_rad[0], li_rad[1], li_rad[2]) <= 0.0:
                continue
            cos_i = dot(ns, wi)
            if cos_i <= 0.0 or dot(ng, wi) <= 0.0:
                continue
            fd, fs, pdf_d, pdf_s = bsdf_eval(base, metal, rough, spec, ns, wi, wo)
            if delta or mode == 0:
                wd = 1.0
                ws = 1.0
            elif mode == 1:
                pb = alpha * ((1.0 - p_s) * pdf_d + p_s * pdf_s)
                wd = ns_l * pdf_l / (ns_l * pdf_l + pb)
                ws = wd
            else:
                wd = ns_l * pdf_l / (ns_l * pdf_l + pdf_d) if pdf_d > 0.0 else 1.0
                ws = ns_l * pdf_l / (ns_l * pdf_l + pdf_s) if pdf_s > 0.0 else 1.0
            f = (fd[0] * wd + fs[0] * ws, fd[1] * wd + fs[1] * ws, fd[2] * wd + fs[2] * ws)
            if max(f[0], f[1], f[2]) <= 0.0:
                continue
            tr = transmittance(S, p, ng, wi, dist)
            if tr <= 0.0:
                continue
            k = alpha * cos_i * tr / (pdf_l * ns_l)
            acc = (acc[0] + f[0] * li_rad[0] * k, acc[1] + f[1] * li_rad[1] * k, acc[2] + f[2] * li_rad[2] * k)
    return acc


@jit
def trace_single(S, o, d, tmin, tmax, bounce, thr, prev_pdf, prev_nl, max_bounces, state):
    """Plain unidirectional path from ray (o, d); ``bounce`` is the index the
    next surface vertex gets."""
    tri_mat = S[4]
    bg = S[18]
    L = (0.0, 0.0, 0.0)
    n_transp = 0
    while True:
        tri, t, b1, b2 = closest_hit(S, o, d, tmin, tmax)
        t_geo = t if tri >= 0 else INF
        e = emitted_along(S, o, d, t_geo, prev_pdf, prev_nl)
        L = (L[0] + thr[0] * e[0], L[1] + thr[1] * e[1], L[2] + thr[2] * e[2])
        if tri < 0:
            L = (L[0] + thr[0] * bg[0], L[1] + thr[1] * bg[1], L[2] + thr[2] * bg[2])
            break
        wo = scale(d, -1.0)
        p, ng, ns, u, v = surface(S, tri, b1, b2, wo)
        base, alpha, metal, rough, spec = material_at(S, tri_mat[tri], u, v)

        # straight pass-through with probability 1 - alpha
        if alpha < 1.0 and next_rand(state) >= alpha:
            n_transp += 1
            if n_transp > MAX_TRANSPARENT:
                break
            o = offset_origin(p, ng, d)
            tmin, tmax = 0.0, INF
            continue

        go_on = bounce + 1 < max_bounces
        p_s = lobe_weights(base, metal, spec, dot(ns, wo))
        # the pass-through draw above already selected reflection with prob alpha
        dl = direct_light(S, p, ng, ns, wo, base, alpha, metal, rough, spec, 1 if go_on else 0, p_s, 1, state)
        inv_a = 1.0 / alpha
        L = (L[0] + thr[0] * dl[0] * inv_a, L[1] + thr[1] * dl[1] * inv_a, L[2] + thr[2] * dl[2] * inv_a)
        if not go_on:
            break

        u0 = next_rand(state)
        u1 = next_rand(state)
        u2 = next_rand(state)
        if u0 < p_s:
            wi = sample_specular(ns, wo, rough, u1, u2)
        else:
            wi = sample_diffuse(ns, u1, u2)
        ci = dot(ns, wi)
        if ci <= 0.0 or dot(ng, wi) <= 0.0:
            break
        fd, fs, pdf_d, pdf_s = bsdf_eval(base, metal, rough, spec, ns, wi, wo)
        pdf = (1.0 - p_s) * pdf_d + p_s * pdf_s
        if pdf <= 0.0:
            break
        k = ci / pdf
        thr = ((fd[0] + fs[0]) * thr[0] * k, (fd[1] + fs[1]) * thr[1] * k, (fd[2] + fs[2]) * thr[2] * k)
        prev_pdf, prev_nl = alpha * pdf, 1.0
        bounce += 1
        if bounce >= RR_START:
            q = min(max(max(thr[0], thr[1], thr[2]), 0.05), 0.95)
            if next_rand(state) >= q:
                break
            thr = scale(thr, 1.0 / q)
        o = offset_origin(p, ng, wi)
        d = wi
        tmin, tmax = 0.0, INF
    return L


@jit
def trace_branched(S, o, d, tmin, tmax, max_bounces, n_light, state):
    """Split the path at the first surface: every light sampled ``n_light``
    times, one continuation per BSDF lobe (diffuse, specular, pass-through),
    then single paths below."""
    tri_mat = S[4]
    bg = S[18]
    tri, t, b1, b2 = closest_hit(S, o, d, tmin, tmax)
    t_geo = t if tri >= 0 else INF
    L = emitted_along(S, o, d, t_geo, 0.0, 0.0)
    if tri < 0:
        return (L[0] + bg[0], L[1] + bg[1], L[2] + bg[2])
    wo = scale(d, -1.0)
    p, ng, ns, u, v = surface(S, tri, b1, b2, wo)
    base, alpha, metal, rough, spec = material_at(S, tri_mat[tri], u, v)

    if alpha < 1.0:
        sub_l = trace_single(S, offset_origin(p, ng, d), d, 0.0, INF, 0, (1.0 - alpha, 1.0 - alpha, 1.0 - alpha), 0.0, 0.0, max_bounces, state)
        L = add(L, sub_l)
    if alpha <= 0.0:
        return L

    go_on = 1 < max_bounces
    f0 = f0_color(base, metal, spec)
    has_d = (1.0 - metal) * max(base[0], base[1], base[2]) > 0.0
    has_s = max(f0[0], f0[1], f0[2]) > 0.0
    dl = direct_light(S, p, ng, ns, wo, base, alpha, metal, rough, spec, 2 if go_on else 0, 0.0, n_light, state)
    L = add(L, dl)
    if not go_on:
        return L

    for lobe in range(2):
        if (lobe == 0 and not has_d) or (lobe == 1 and not has_s):
            continue
        u1 = next_rand(state)
        u2 = next_rand(state)
        if lobe == 0:
            wi = sample_diffuse(ns, u1, u2)
        else:
            wi = sample_specular(ns, wo, rough, u1, u2)
        ci = dot(ns, wi)
        if ci <= 0.0 or dot(ng, wi) <= 0.0:
            continue
        fd, fs, pdf_d, pdf_s = bsdf_eval(base, metal, rough, spec, ns, wi, wo)
        f = fd if lobe == 0 else fs
        pdf = pdf_d if lobe == 0 else pdf_s
        if pdf <= 0.0:
            continue
        k = alpha * ci / pdf
        thr = (f[0] * k, f[1] * k, f[2] * k)
        sub_l = trace_single(S, offset_origin(p, ng, wi), wi, 0.0, INF, 1, thr, pdf, float(n_light), max_bounces, state)
        L = add(L, sub_l)
    return L


@jit
def render_tile(S, rot, pos, fx, fy, cx, cy, near, far, spp, max_bounces, branched, n_light, seed,
                x0, x1, y0, y1, width, out_rgb, out_var, out_depth, out_id, out_rejected):
    tri_obj = S[5]
    state = np.zeros(2, np.uint64)
    k = int(math.floor(math.sqrt(spp)))
    for j in range(y0, y1):
        for i in range(x0, x1):
            pix = np.uint64(j * width + i)

            # ground-truth passes: jitter-free center ray
            dc = normalize(((i + 0.5 - cx) / fx, -(j + 0.5 - cy) / fy, -1.0))
            axial = -dc[2]
            dw = (
                rot[0, 0] * dc[0] + rot[0, 1] * dc[1] + rot[0, 2] * dc[2],
                rot[1, 0] * dc[0] + rot[1, 1] * dc[1] + rot[1, 2] * dc[2],
                rot[2, 0] * dc[0] + rot[2, 1] * dc[1] + rot[2, 2] * dc[2],
            )
            tri, t, _, _ = closest_hit(S, pos, dw, near / axial, far / axial)
            depth = t * axial if tri >= 0 else INF
            if tri >= 0 and near <= depth <= far:
                out_depth[j, i] = depth
                out_id[j, i] = tri_obj[tri]
            else:
                out_depth[j, i] = INF
                out_id[j, i] = 0

            if spp <= 0:
                continue
            sr, sg, sb = 0.0, 0.0, 0.0
            qr, qg, qb = 0.0, 0.0, 0.0
            n_ok = 0
            for s in range(spp):
                state[0] = fold(fold(fold(np.uint64(0), seed), pix), np.uint64(s))
                state[1] = np.uint64(0)
                ju = next_rand(state)
                jv = next_rand(state)
                if s < k * k:
                    ju = (s % k + ju) / k
                    jv = (s // k + jv) / k
                dc = normalize(((i + ju - cx) / fx, -(j + jv - cy) / fy, -1.0))
                axial = -dc[2]
                dw = (
                    rot[0, 0] * dc[0] + rot[0, 1] * dc[1] + rot[0, 2] * dc[2],
                    rot[1, 0] * dc[0] + rot[1, 1] * dc[1] + rot[1, 2] * dc[2],
                    rot[2, 0] * dc[0] + rot[2, 1] * dc[1] + rot[2, 2] * dc[2],
                )
                if branched:
                    c = trace_branched(S, pos, dw, near / axial, far / axial, max_bounces, n_light, state)
                else:
                    c = trace_single(S, pos, dw, near / axial, far / axial, 0, (1.0, 1.0, 1.0), 0.0, 0.0, max_bounces, state)
                if not (math.isfinite(c[0]) and math.isfinite(c[1]) and math.isfinite(c[2])):
                    out_rejected[0] += 1
                    continue
                n_ok += 1
                sr += c[0]
                sg += c[1]
                sb += c[2]
                qr += c[0] * c[0]
                qg += c[1] * c[1]
                qb += c[2] * c[2]
            if n_ok > 0:
                mr, mg, mb = sr / n_ok, sg / n_ok, sb / n_ok
                out_rgb[j, i, 0] = mr
                out_rgb[j, i, 1] = mg
                out_rgb[j, i, 2] = mb
                if n_ok > 1:
                    var = (qr - n_ok * mr * mr) + (qg - n_ok * mg * mg) + (qb - n_ok * mb * mb)
                    out_var[j, i] = max(var, 0.0) / (3.0 * (n_ok - 1))
