"""Per-pixel compositing loops compiled with numba.

Every kernel walks pixels row by row; gradient contributions are written to
per-row buffers and reduced by the caller in a fixed order, so the serial and
parallel builds produce identical bits.
"""
import math

import numpy as np
from numba import njit, prange

# The alpha test is written out in each kernel; a shared helper returning a
# tuple ran several times slower.

# layout of the per-Gaussian screen-space gradient buffer
G_MX, G_MY, G_CA, G_CB, G_CC, G_OP = 0, 1, 2, 3, 4, 5
N_SCREEN = 6


def _forward(order, means, conics, opac, bbox, attrs, bg, height, width,
             alpha_max, alpha_min, cutoff2, image, accum):
    m = attrs.shape[1]
    for py in prange(height):
        for px in range(width):
            trans = 1.0
            wsum = 0.0
            for idx in range(order.shape[0]):
                g = order[idx]
                if px < bbox[g, 0] or px > bbox[g, 1] or py < bbox[g, 2] or py > bbox[g, 3]:
                    continue
                dx = px - means[g, 0]
                dy = py - means[g, 1]
                q = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
                if q > cutoff2:
                    continue
                a = opac[g] * math.exp(-0.5 * q)
                if a < alpha_min:
                    continue
                if a > alpha_max:
                    a = alpha_max
                w = a * trans
                for c in range(m):
                    image[py, px, c] += w * attrs[g, c]
                wsum += w
                trans *= 1.0 - a
            for c in range(m):
                image[py, px, c] += (1.0 - wsum) * bg[c]
            accum[py, px] = wsum


def _weights(order, means, conics, opac, bbox, nodes, alpha_max, alpha_min,
             cutoff2, out):
    """Composited weight of every Gaussian at each integer node (x, y)."""
    for j in prange(nodes.shape[0]):
        px = nodes[j, 0]
        py = nodes[j, 1]
        trans = 1.0
        for idx in range(order.shape[0]):
            g = order[idx]
            if px < bbox[g, 0] or px > bbox[g, 1] or py < bbox[g, 2] or py > bbox[g, 3]:
                continue
            dx = px - means[g, 0]
            dy = py - means[g, 1]
            q = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
            if q > cutoff2:
                continue
            a = opac[g] * math.exp(-0.5 * q)
            if a < alpha_min:
                continue
            if a > alpha_max:
                a = alpha_max
            out[j, g] = a * trans
            trans *= 1.0 - a


def _loss_backward(order, means, conics, opac, bbox, attrs, bg, target, scale,
                   alpha_max, alpha_min, cutoff2, g_screen, g_attr, row_loss):
    """Fused forward pass, squared error and reverse sweep per pixel.

    The image gradient is scale * (image - target).  g_screen is (H, n, 6),
    g_attr is (H, n, m) and row_loss (H,) receives per-row sums of squared
    error.
    """
    height, width = target.shape[0], target.shape[1]
    m = attrs.shape[1]
    nmax = order.shape[0]
    for py in prange(height):
        ids = np.empty(nmax, dtype=np.int64)
        alphas = np.empty(nmax)
        gausses = np.empty(nmax)
        clamped = np.empty(nmax, dtype=np.bool_)
        transes = np.empty(nmax)
        suffix = np.empty(m)
        color = np.empty(m)
        grad = np.empty(m)
        for px in range(width):
            cnt = 0
            trans = 1.0
            for idx in range(nmax):
                g = order[idx]
                if px < bbox[g, 0] or px > bbox[g, 1] or py < bbox[g, 2] or py > bbox[g, 3]:
                    continue
                dx = px - means[g, 0]
                dy = py - means[g, 1]
                q = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
                if q > cutoff2:
                    continue
                gs = math.exp(-0.5 * q)
                a = opac[g] * gs
                if a < alpha_min:
                    continue
                cl = a > alpha_max
                if cl:
                    a = alpha_max
                ids[cnt] = g
                alphas[cnt] = a
                gausses[cnt] = gs
                clamped[cnt] = cl
                transes[cnt] = trans
                cnt += 1
                trans *= 1.0 - a
            for c in range(m):
                color[c] = 0.0
            wsum = 0.0
            for jj in range(cnt):
                w = alphas[jj] * transes[jj]
                for c in range(m):
                    color[c] += w * attrs[ids[jj], c]
                wsum += w
            for c in range(m):
                resid = color[c] + (1.0 - wsum) * bg[c] - target[py, px, c]
                row_loss[py] += resid * resid
                grad[c] = scale * resid
                suffix[c] = 0.0
            for jj in range(cnt - 1, -1, -1):
                g = ids[jj]
                a = alphas[jj]
                t_i = transes[jj]
                w = a * t_i
                dl_da = 0.0
                for c in range(m):
                    gc = grad[c]
                    shifted = attrs[g, c] - bg[c]
                    g_attr[py, g, c] += gc * w
                    dl_da += gc * (t_i * shifted - suffix[c] / (1.0 - a))
                    suffix[c] += w * shifted
                if clamped[jj]:
                    continue
                g_screen[py, g, G_OP] += dl_da * gausses[jj]
                dl_dq = -0.5 * dl_da * a
                dx = px - means[g, 0]
                dy = py - means[g, 1]
                ca = conics[g, 0]
                cb = conics[g, 1]
                cc = conics[g, 2]
                g_screen[py, g, G_MX] -= dl_dq * 2.0 * (ca * dx + cb * dy)
                g_screen[py, g, G_MY] -= dl_dq * 2.0 * (cb * dx + cc * dy)
                g_screen[py, g, G_CA] += dl_dq * dx * dx
                g_screen[py, g, G_CB] += dl_dq * 2.0 * dx * dy
                g_screen[py, g, G_CC] += dl_dq * dy * dy


forward_serial = njit(cache=True)(_forward)
forward_parallel = njit(cache=True, parallel=True)(_forward)
weights_serial = njit(cache=True)(_weights)
weights_parallel = njit(cache=True, parallel=True)(_weights)
loss_backward_serial = njit(cache=True)(_loss_backward)
loss_backward_parallel = njit(cache=True, parallel=True)(_loss_backward)
