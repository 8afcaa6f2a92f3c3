"""Rotated-rectangle geometry in the BEV plane.

A box is ``(cx, cy, length, width, yaw)``; length runs along the heading.
"""

from __future__ import annotations

import math

import numpy as np


def box_corners(box):
    """Counter-clockwise corners, shape (4, 2)."""
    cx, cy, length, width, yaw = box[:5]
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = length / 2.0, width / 2.0
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return np.array([(cx + c * u - s * v, cy + s * u + c * v) for u, v in local])


def polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject, clip):
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW polygon ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out) if out else np.zeros((0, 2))


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_area(a, b):
    return polygon_area(clip_convex(box_corners(a), box_corners(b)))


def point_in_box(box, px, py):
    """Strict interior test, vectorised over ``px``, ``py``."""
    cx, cy, length, width, yaw = box[:5]
    c, s = math.cos(yaw), math.sin(yaw)
    dx, dy = np.asarray(px) - cx, np.asarray(py) - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) < length / 2.0) & (np.abs(v) < width / 2.0)


def to_box_frame(box, px, py):
    cx, cy, _, _, yaw = box[:5]
    c, s = math.cos(yaw), math.sin(yaw)
    dx, dy = np.asarray(px) - cx, np.asarray(py) - cy
    return c * dx + s * dy, -s * dx + c * dy


def segment_hits_box(box, ox, oy, px, py):
    """Whether segments origin->(px, py) pass through the box interior.

    Slab test in the box frame; vectorised over the end points.
    """
    length, width = box[2], box[3]
    u0, v0 = to_box_frame(box, ox, oy)
    u1, v1 = to_box_frame(box, px, py)
    du, dv = u1 - u0, v1 - v0
    t_lo = np.zeros(np.shape(u1))
    t_hi = np.ones(np.shape(u1))
    ok = np.ones(np.shape(u1), dtype=bool)
    for p0, d, half in ((u0, du, length / 2.0), (v0, dv, width / 2.0)):
        par = np.abs(d) < 1e-12
        ok &= ~par | (np.abs(p0) < half)
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (-half - p0) / d
            tb = (half - p0) / d
        lo = np.where(par, -np.inf, np.minimum(ta, tb))
        hi = np.where(par, np.inf, np.maximum(ta, tb))
        t_lo = np.maximum(t_lo, lo)
        t_hi = np.minimum(t_hi, hi)
    return ok & (t_lo < t_hi)
