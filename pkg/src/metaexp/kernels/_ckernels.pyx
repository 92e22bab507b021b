# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    ICE = 2
    WALL = 4
    LOCK = 5
    TELEPORTER = 7
    AGENT_CHANNEL = 8
    N_CHANNELS = 9


def discounted_returns(rewards, double gamma):
    cdef const double[:] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0], t
    out = np.empty(n)
    cdef double[:] o = out
    cdef double acc = 0.0
    for t in range(n - 1, -1, -1):
        acc = r[t] + gamma * acc
        o[t] = acc
    return out


def masked_returns(rewards, mask, double gamma):
    cdef const double[:] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const double[:] m = np.ascontiguousarray(mask, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0], t
    out = np.empty(n)
    cdef double[:] o = out
    cdef double acc = 0.0
    for t in range(n - 1, -1, -1):
        acc = r[t] * m[t] + gamma * acc
        o[t] = acc
    return out


def gae_advantages(rewards, values, double gamma, double lam, double last_value=0.0):
    cdef const double[:] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const double[:] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0], t
    out = np.empty(n)
    cdef double[:] o = out
    cdef double acc = 0.0, delta, next_v = last_value
    for t in range(n - 1, -1, -1):
        delta = r[t] + gamma * next_v - v[t]
        acc = delta + gamma * lam * acc
        o[t] = acc
        next_v = v[t]
    return out


cdef inline bint _blocked(const signed char[:, :] tiles, long x, long y, bint has_key) noexcept:
    cdef long h = tiles.shape[0], w = tiles.shape[1]
    if x < 0 or y < 0 or x >= w or y >= h:
        return True
    cdef signed char t = tiles[y, x]
    return t == WALL or (t == LOCK and not has_key)


cdef inline long _touch(const signed char[:, :] tiles, long x, long y) noexcept:
    cdef long h = tiles.shape[0], w = tiles.shape[1]
    if x < 0 or y < 0 or x >= w or y >= h:
        return 1 << WALL
    return 1 << tiles[y, x]


def krazy_move(const signed char[:, :] tiles, long x, long y, long dx, long dy,
               bint has_key, teleporters):
    cdef long h = tiles.shape[0], w = tiles.shape[1]
    cdef long nx = x + dx, ny = y + dy
    cdef long touched, slides = 0
    cdef long x1, y1, x2, y2
    if _blocked(tiles, nx, ny, has_key):
        return x, y, _touch(tiles, nx, ny)
    x = nx
    y = ny
    touched = _touch(tiles, x, y)
    while tiles[y, x] == ICE:
        nx = x + dx
        ny = y + dy
        if _blocked(tiles, nx, ny, has_key):
            touched |= _touch(tiles, nx, ny)
            break
        x = nx
        y = ny
        touched |= _touch(tiles, x, y)
        slides += 1
        if slides > w + h:
            raise RuntimeError("ice slide did not terminate")
    x1, y1, x2, y2 = teleporters
    if tiles[y, x] == TELEPORTER and x1 >= 0:
        if x == x1 and y == y1:
            x = x2
            y = y2
        elif x == x2 and y == y2:
            x = x1
            y = y1
    return x, y, touched


def encode_window(const signed char[:, :] tiles, long x, long y, long radius,
                  const long[:] channel_of, double[:] out):
    cdef long h = tiles.shape[0], w = tiles.shape[1]
    cdef long xx, yy, k = 0, base, code, ch
    out[:] = 0.0
    for yy in range(y - radius, y + radius + 1):
        for xx in range(x - radius, x + radius + 1):
            base = k * N_CHANNELS
            if xx == x and yy == y:
                out[base + AGENT_CHANNEL] = 1.0
            else:
                if xx < 0 or yy < 0 or xx >= w or yy >= h:
                    code = WALL
                else:
                    code = tiles[yy, xx]
                ch = channel_of[code]
                if ch >= 0:
                    out[base + ch] = 1.0
            k += 1
    return out.base


def encode_grid(const signed char[:, :] tiles, long x, long y,
                const long[:] channel_of, double[:] out):
    cdef long h = tiles.shape[0], w = tiles.shape[1]
    cdef long xx, yy, k = 0, base, ch
    out[:] = 0.0
    for yy in range(h):
        for xx in range(w):
            base = k * N_CHANNELS
            if xx == x and yy == y:
                out[base + AGENT_CHANNEL] = 1.0
            else:
                ch = channel_of[tiles[yy, xx]]
                if ch >= 0:
                    out[base + ch] = 1.0
            k += 1
    return out.base
