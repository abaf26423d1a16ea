"""Numba kernels for the particle engine: reflection and pair search."""

import numpy as np
from numba import njit

# at most this many cell-list bins per axis
MAX_CELLS_PER_AXIS = 128


@njit(cache=True, inline="always")
def _fold(x, half):
    # reflecting walls at +-half; exact for any number of bounces
    period = 4.0 * half
    y = (x + half) % period
    if y > 2.0 * half:
        y = period - y
    return y - half


@njit(cache=True)
def fold_into_cube(pos, half):
    n = pos.shape[0]
    for i in range(n):
        for k in range(3):
            pos[i, k] = _fold(pos[i, k], half)


@njit(cache=True)
def displace_enzymes(pos, z, bound, s_free, s_bound, half, hit, unfolded):
    """Move every enzyme by ``z`` scaled per state and reflect at the cube faces.

    Bound enzymes (EA) that leave the cube are flagged in ``hit`` and keep
    their unfolded proposal in ``unfolded``; free enzymes are reflected.
    """
    n = pos.shape[0]
    for i in range(n):
        s = s_bound if bound[i] else s_free
        x0 = pos[i, 0] + s * z[i, 0]
        x1 = pos[i, 1] + s * z[i, 1]
        x2 = pos[i, 2] + s * z[i, 2]
        out = (x0 > half or x0 < -half or x1 > half or x1 < -half
               or x2 > half or x2 < -half)
        hit[i] = out and bound[i]
        if out:
            unfolded[i, 0] = x0
            unfolded[i, 1] = x1
            unfolded[i, 2] = x2
            x0 = _fold(x0, half)
            x1 = _fold(x1, half)
            x2 = _fold(x2, half)
        pos[i, 0] = x0
        pos[i, 1] = x1
        pos[i, 2] = x2


class PairGrid:
    """Persistent cell-list buffers for :func:`find_pairs`, sized for one cube."""

    def __init__(self, half, r_b):
        side = 2.0 * half
        ncell = MAX_CELLS_PER_AXIS
        if r_b > 0 and side / ncell < r_b:
            ncell = max(1, int(side / r_b))
        self.ncell = ncell
        self.cell = side / ncell
        self.head = np.full(ncell**3, -1, dtype=np.int32)
        self.flag = np.zeros(ncell**3, dtype=np.uint8)


@njit(cache=True, inline="always")
def _cell_of(x, half, inv_cell, ncell):
    c = int((x + half) * inv_cell)
    if c < 0:
        c = 0
    elif c >= ncell:
        c = ncell - 1
    return c


@njit(cache=True)
def find_pairs(a_pos, e_pos, e_ok, half, r_b, cell, ncell, head, flag):
    """All (A, E) index pairs with centre distance <= r_b, plus squared distances.

    Free A are threaded into linked cell lists and every cell overlapping an
    A's +-r_b box is flagged, so an enzyme costs a single lookup unless an A
    is nearby; flagged enzymes scan only the cells overlapping their own box.
    ``head`` and ``flag`` are returned to their cleared state before exit.
    """
    n_a = a_pos.shape[0]
    inv_cell = 1.0 / cell
    lim = half + r_b
    nxt = np.full(n_a, -1, dtype=np.int32)
    a_in = np.zeros(n_a, dtype=np.bool_)
    for a in range(n_a):
        ax = a_pos[a, 0]
        ay = a_pos[a, 1]
        az = a_pos[a, 2]
        if ax > lim or ax < -lim or ay > lim or ay < -lim or az > lim or az < -lim:
            continue
        a_in[a] = True
        c = (_cell_of(ax, half, inv_cell, ncell) * ncell
             + _cell_of(ay, half, inv_cell, ncell)) * ncell + _cell_of(az, half, inv_cell, ncell)
        nxt[a] = head[c]
        head[c] = a
        _mark_box(flag, ax, ay, az, r_b, half, inv_cell, ncell, 1)

    cap = 64
    pa = np.empty(cap, dtype=np.int64)
    pe = np.empty(cap, dtype=np.int64)
    pd = np.empty(cap, dtype=np.float64)
    n_pairs = 0
    rb2 = r_b * r_b
    for e in range(e_pos.shape[0]):
        if not e_ok[e]:
            continue
        ex = e_pos[e, 0]
        ey = e_pos[e, 1]
        ez = e_pos[e, 2]
        c = (_cell_of(ex, half, inv_cell, ncell) * ncell
             + _cell_of(ey, half, inv_cell, ncell)) * ncell + _cell_of(ez, half, inv_cell, ncell)
        if flag[c] == 0:
            continue
        x_lo = _cell_of(ex - r_b, half, inv_cell, ncell)
        x_hi = _cell_of(ex + r_b, half, inv_cell, ncell)
        y_lo = _cell_of(ey - r_b, half, inv_cell, ncell)
        y_hi = _cell_of(ey + r_b, half, inv_cell, ncell)
        z_lo = _cell_of(ez - r_b, half, inv_cell, ncell)
        z_hi = _cell_of(ez + r_b, half, inv_cell, ncell)
        for ix in range(x_lo, x_hi + 1):
            for iy in range(y_lo, y_hi + 1):
                for iz in range(z_lo, z_hi + 1):
                    a = head[(ix * ncell + iy) * ncell + iz]
                    while a >= 0:
                        dx = a_pos[a, 0] - ex
                        dy = a_pos[a, 1] - ey
                        dz = a_pos[a, 2] - ez
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 <= rb2:
                            if n_pairs == cap:
                                cap *= 2
                                pa2 = np.empty(cap, dtype=np.int64)
                                pe2 = np.empty(cap, dtype=np.int64)
                                pd2 = np.empty(cap, dtype=np.float64)
                                pa2[:n_pairs] = pa[:n_pairs]
                                pe2[:n_pairs] = pe[:n_pairs]
                                pd2[:n_pairs] = pd[:n_pairs]
                                pa, pe, pd = pa2, pe2, pd2
                            pa[n_pairs] = a
                            pe[n_pairs] = e
                            pd[n_pairs] = d2
                            n_pairs += 1
                        a = nxt[a]

    for a in range(n_a):
        if not a_in[a]:
            continue
        ax = a_pos[a, 0]
        ay = a_pos[a, 1]
        az = a_pos[a, 2]
        c = (_cell_of(ax, half, inv_cell, ncell) * ncell
             + _cell_of(ay, half, inv_cell, ncell)) * ncell + _cell_of(az, half, inv_cell, ncell)
        head[c] = -1
        _mark_box(flag, ax, ay, az, r_b, half, inv_cell, ncell, 0)
    return pa[:n_pairs], pe[:n_pairs], pd[:n_pairs]


@njit(cache=True, inline="always")
def _mark_box(flag, x, y, z, r, half, inv_cell, ncell, value):
    for ix in range(_cell_of(x - r, half, inv_cell, ncell), _cell_of(x + r, half, inv_cell, ncell) + 1):
        for iy in range(_cell_of(y - r, half, inv_cell, ncell), _cell_of(y + r, half, inv_cell, ncell) + 1):
            for iz in range(_cell_of(z - r, half, inv_cell, ncell), _cell_of(z + r, half, inv_cell, ncell) + 1):
                flag[(ix * ncell + iy) * ncell + iz] = value


@njit(cache=True)
def count_in_sphere(pos, cx, cy, cz, radius):
    r2 = radius * radius
    n = 0
    for i in range(pos.shape[0]):
        dx = pos[i, 0] - cx
        dy = pos[i, 1] - cy
        dz = pos[i, 2] - cz
        if dx * dx + dy * dy + dz * dz <= r2:
            n += 1
    return n
