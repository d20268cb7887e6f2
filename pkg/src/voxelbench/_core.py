"""Compiled inner loops shared by the geometry and back projection modules.

Everything in here works on flat float32 buffers and plain scalars so numba
can compile it in nopython mode.  All arithmetic on voxel/detector values is
kept in single precision; numeric literals are pre-typed as float32 because
``1 - f32`` silently promotes to float64 under numba's typing rules.
"""

import math

import numpy as np
from numba import njit

F32 = np.float32

ZERO = F32(0.0)
ONE = F32(1.0)
TWO = F32(2.0)
NEG_TWO = F32(-2.0)
W_EPSILON = F32(1e-12)

# reciprocal modes
EXACT = 0
FAST = 1
FAST_REFINED = 2

# fetch strategies
CONDITIONAL = 0
PADDED_GATHER = 1
PADDED_PAIRWISE = 2

# bits kept by the emulated hardware reciprocal: 1 implicit + 11 explicit
_RCP_SCALE = 4096.0

_jit = njit(nogil=True, cache=True, error_model="numpy")


@_jit
def fast_recip(x, refined):
    """Reduced-precision reciprocal of a float32, optionally with one Newton step."""
    if x == ZERO:
        return ONE / x
    m, e = math.frexp(1.0 / np.float64(x))
    r = F32(math.ldexp(math.trunc(m * _RCP_SCALE) / _RCP_SCALE, e))
    if refined:
        r = r * (TWO - x * r)
    return r


@_jit
def fast_recip_array(x, refined):
    out = np.empty(x.shape[0], np.float32)
    for i in range(x.shape[0]):
        out[i] = fast_recip(x[i], refined)
    return out


@_jit
def project(a, O, MM, x, y, z):
    """Voxel index -> (u, v, w) in the exact operation order of the reference loop."""
    wx = O + F32(x) * MM
    wy = O + F32(y) * MM
    wz = O + F32(z) * MM
    u = wx * a[0] + wy * a[3] + wz * a[6] + a[9]
    v = wx * a[1] + wy * a[4] + wz * a[7] + a[10]
    w = wx * a[2] + wy * a[5] + wz * a[8] + a[11]
    return u, v, w


@_jit
def dehomogenize(u, v, w, recip):
    if recip == EXACT:
        return u / w, v / w, ONE
    r = fast_recip(w, recip == FAST_REFINED)
    return u * r, v * r, r


@_jit
def split_coord(c, hi):
    """Truncate toward zero after clamping into [-2, hi].

    The clamp only moves coordinates that cannot hit the detector, so the
    result for in-range values is exactly the C cast.  It keeps int
    conversion defined and keeps padded fetches inside a 2-pixel apron.
    """
    c = min(max(c, NEG_TWO), hi)
    i = np.int32(c)
    return i, c - F32(i)


@_jit
def fetch_checked(img, stride, pad, width, height, iix, iiy):
    """Four bounds-checked loads; out-of-detector samples read as zero."""
    bl = ZERO
    br = ZERO
    tl = ZERO
    tr = ZERO
    row0 = (iiy + pad) * stride + pad
    row1 = row0 + stride
    if iiy >= 0 and iiy < height and iix >= 0 and iix < width:
        bl = img[row0 + iix]
    if iiy >= 0 and iiy < height and iix + 1 >= 0 and iix + 1 < width:
        br = img[row0 + iix + 1]
    if iiy + 1 >= 0 and iiy + 1 < height and iix >= 0 and iix < width:
        tl = img[row1 + iix]
    if iiy + 1 >= 0 and iiy + 1 < height and iix + 1 >= 0 and iix + 1 < width:
        tr = img[row1 + iix + 1]
    return bl, br, tl, tr


@_jit
def bilinear(bl, br, tl, tr, scalex, scaley):
    valb = (ONE - scalex) * bl + scalex * br
    valt = (ONE - scalex) * tl + scalex * tr
    return (ONE - scaley) * valb + scaley * valt


@_jit
def voxel_update(vol, img, stride, pad, a, O, MM, L, width, height, x, y, z, recip):
    """Scalar single-voxel update; also used for lane remainders."""
    u, v, w = project(a, O, MM, x, y, z)
    if abs(w) < W_EPSILON:
        return
    ix, iy, r = dehomogenize(u, v, w, recip)
    iix, scalex = split_coord(ix, F32(width))
    iiy, scaley = split_coord(iy, F32(height))
    bl, br, tl, tr = fetch_checked(img, stride, pad, width, height, iix, iiy)
    val = bilinear(bl, br, tl, tr, scalex, scaley)
    idx = z * L * L + y * L + x
    if recip == EXACT:
        vol[idx] += val / (w * w)
    else:
        vol[idx] += val * (r * r)


@_jit
def reference_planes(vol, img, a, O, MM, L, width, height, z0, z1):
    for z in range(z0, z1):
        for y in range(L):
            for x in range(L):
                voxel_update(vol, img, width, 0, a, O, MM, L, width, height, x, y, z, EXACT)


@_jit
def kernel_planes(vol, img, stride, pad, a, O, MM, L, width, height,
                  z0, z1, starts, stops, lanes, strategy, recip):
    """Line-update kernel over planes [z0, z1), processing `lanes` voxels per step."""
    fw = F32(width)
    fh = F32(height)
    # per-lane "registers"
    wreg = np.empty(lanes, np.float32)
    rreg = np.empty(lanes, np.float32)
    sx = np.empty(lanes, np.float32)
    sy = np.empty(lanes, np.float32)
    iix = np.empty(lanes, np.int32)
    iiy = np.empty(lanes, np.int32)
    live = np.empty(lanes, np.bool_)
    offs = np.empty(lanes, np.int64)
    bl = np.empty(lanes, np.float32)
    br = np.empty(lanes, np.float32)
    tl = np.empty(lanes, np.float32)
    tr = np.empty(lanes, np.float32)
    pairs_b = np.empty(2 * lanes, np.float32)
    pairs_t = np.empty(2 * lanes, np.float32)

    for z in range(z0, z1):
        for y in range(L):
            start = starts[z, y]
            stop = stops[z, y]
            body = start + (stop - start) // lanes * lanes
            base = z * L * L + y * L
            for x0 in range(start, body, lanes):
                # Part 1: geometry
                for l in range(lanes):
                    u, v, w = project(a, O, MM, x0 + l, y, z)
                    wreg[l] = w
                    if abs(w) < W_EPSILON:
                        live[l] = False
                        iix[l] = -2
                        iiy[l] = -2
                        sx[l] = ZERO
                        sy[l] = ZERO
                        rreg[l] = ONE
                        continue
                    live[l] = True
                    ix, iy, r = dehomogenize(u, v, w, recip)
                    rreg[l] = r
                    iix[l], sx[l] = split_coord(ix, fw)
                    iiy[l], sy[l] = split_coord(iy, fh)

                # Part 2: fetch the four neighbours
                if strategy == CONDITIONAL:
                    for l in range(lanes):
                        bl[l], br[l], tl[l], tr[l] = fetch_checked(
                            img, stride, pad, width, height, iix[l], iiy[l])
                else:
                    for l in range(lanes):
                        offs[l] = (iiy[l] + pad) * stride + iix[l] + pad
                    if strategy == PADDED_GATHER:
                        for l in range(lanes):
                            bl[l] = img[offs[l]]
                        for l in range(lanes):
                            br[l] = img[offs[l] + 1]
                        for l in range(lanes):
                            tl[l] = img[offs[l] + stride]
                        for l in range(lanes):
                            tr[l] = img[offs[l] + stride + 1]
                    else:
                        # one two-wide load per lane and row, then deinterleave
                        for l in range(lanes):
                            o = offs[l]
                            pairs_b[2 * l] = img[o]
                            pairs_b[2 * l + 1] = img[o + 1]
                            pairs_t[2 * l] = img[o + stride]
                            pairs_t[2 * l + 1] = img[o + stride + 1]
                        for l in range(lanes):
                            bl[l] = pairs_b[2 * l]
                            br[l] = pairs_b[2 * l + 1]
                            tl[l] = pairs_t[2 * l]
                            tr[l] = pairs_t[2 * l + 1]

                # Part 3: interpolate and accumulate
                for l in range(lanes):
                    if not live[l]:
                        continue
                    val = bilinear(bl[l], br[l], tl[l], tr[l], sx[l], sy[l])
                    if recip == EXACT:
                        vol[base + x0 + l] += val / (wreg[l] * wreg[l])
                    else:
                        vol[base + x0 + l] += val * (rreg[l] * rreg[l])

            for x in range(body, stop):
                voxel_update(vol, img, stride, pad, a, O, MM, L, width, height, x, y, z, recip)


@_jit
def contributes(a, O, MM, width, height, x, y, z, recip):
    """True when some in-detector neighbour of the voxel has nonzero weight."""
    u, v, w = project(a, O, MM, x, y, z)
    if abs(w) < W_EPSILON:
        return False
    ix, iy, r = dehomogenize(u, v, w, recip)
    iix, scalex = split_coord(ix, F32(width))
    iiy, scaley = split_coord(iy, F32(height))
    xs_ok = False
    if iix >= 0 and iix < width and scalex != ONE:
        xs_ok = True
    if iix + 1 >= 0 and iix + 1 < width and scalex != ZERO:
        xs_ok = True
    ys_ok = False
    if iiy >= 0 and iiy < height and scaley != ONE:
        ys_ok = True
    if iiy + 1 >= 0 and iiy + 1 < height and scaley != ZERO:
        ys_ok = True
    return xs_ok and ys_ok


@_jit
def _clip_linear(c, d, lo, hi):
    # {t in [lo, hi] : c*t + d >= 0}
    if c > 0.0:
        lo = max(lo, -d / c)
    elif c < 0.0:
        hi = min(hi, -d / c)
    elif d < 0.0:
        hi = lo - 1.0
    return lo, hi


@_jit
def _line_window(cu, du, cv, dv, cw, dw, xlo, xhi, ylo, yhi, last):
    """Hull of {t in [0, last] : xlo <= u/w <= xhi, ylo <= v/w <= yhi} for affine u, v, w."""
    best_lo = np.inf
    best_hi = -np.inf
    for s in (1.0, -1.0):
        lo, hi = _clip_linear(s * cw, s * dw, 0.0, last)
        lo, hi = _clip_linear(s * (cu - xlo * cw), s * (du - xlo * dw), lo, hi)
        lo, hi = _clip_linear(s * (xhi * cw - cu), s * (xhi * dw - du), lo, hi)
        lo, hi = _clip_linear(s * (cv - ylo * cw), s * (dv - ylo * dw), lo, hi)
        lo, hi = _clip_linear(s * (yhi * cw - cv), s * (yhi * dw - dv), lo, hi)
        if lo <= hi:
            best_lo = min(best_lo, lo)
            best_hi = max(best_hi, hi)
    return best_lo, best_hi


@_jit
def clip_mask(a, O, MM, L, width, height, recip, starts, stops):
    """Per-line [start, stop) windows.

    An analytic window with a pixel margin is solved in double precision, then
    both ends are walked inward with the exact single-precision predicate so
    the result is tight against the kernel's own arithmetic.
    """
    a64 = a.astype(np.float64)
    o = np.float64(O)
    mm = np.float64(MM)
    margin = 1.0 + 1e-3 * max(width, height)
    xlo = -2.0 - margin
    xhi = width + margin
    ylo = -2.0 - margin
    yhi = height + margin
    for z in range(L):
        wz = o + z * mm
        for y in range(L):
            wy = o + y * mm
            cu = mm * a64[0]
            cv = mm * a64[1]
            cw = mm * a64[2]
            du = o * a64[0] + wy * a64[3] + wz * a64[6] + a64[9]
            dv = o * a64[1] + wy * a64[4] + wz * a64[7] + a64[10]
            dw = o * a64[2] + wy * a64[5] + wz * a64[8] + a64[11]
            lo, hi = _line_window(cu, du, cv, dv, cw, dw, xlo, xhi, ylo, yhi, L - 1.0)
            if lo > hi:
                starts[z, y] = 0
                stops[z, y] = 0
                continue
            start = max(0, int(math.ceil(lo)) - 1)
            stop = min(L, int(math.floor(hi)) + 2)
            while start < stop and not contributes(a, O, MM, width, height, start, y, z, recip):
                start += 1
            while stop > start and not contributes(a, O, MM, width, height, stop - 1, y, z, recip):
                stop -= 1
            if start == stop:
                start = 0
                stop = 0
            starts[z, y] = start
            stops[z, y] = stop


@_jit
def splat(phantom, out, a, O, MM, L, width, height):
    """Adjoint of the additive part of the reference update; `out` is float64 (height, width)."""
    for z in range(L):
        for y in range(L):
            for x in range(L):
                val = phantom[z * L * L + y * L + x]
                if val == ZERO:
                    continue
                u, v, w = project(a, O, MM, x, y, z)
                if abs(w) < W_EPSILON:
                    continue
                ix = u / w
                iy = v / w
                iix, scalex = split_coord(ix, F32(width))
                iiy, scaley = split_coord(iy, F32(height))
                wgt = np.float64(val) / (np.float64(w) * np.float64(w))
                fx0 = np.float64(ONE - scalex)
                fx1 = np.float64(scalex)
                fy0 = np.float64(ONE - scaley)
                fy1 = np.float64(scaley)
                if iiy >= 0 and iiy < height and iix >= 0 and iix < width:
                    out[iiy, iix] += wgt * fx0 * fy0
                if iiy >= 0 and iiy < height and iix + 1 >= 0 and iix + 1 < width:
                    out[iiy, iix + 1] += wgt * fx1 * fy0
                if iiy + 1 >= 0 and iiy + 1 < height and iix >= 0 and iix < width:
                    out[iiy + 1, iix] += wgt * fx0 * fy1
                if iiy + 1 >= 0 and iiy + 1 < height and iix + 1 >= 0 and iix + 1 < width:
                    out[iiy + 1, iix + 1] += wgt * fx1 * fy1
