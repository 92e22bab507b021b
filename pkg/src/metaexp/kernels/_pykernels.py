"""Pure-Python reference kernels (fallback when the compiled module is absent).

Loop order matches ``_ckernels.pyx`` exactly so both backends produce
bit-identical results.
"""
import numpy as np

ICE = 2
WALL = 4
LOCK = 5
TELEPORTER = 7
AGENT_CHANNEL = 8
N_CHANNELS = 9


def discounted_returns(rewards, gamma):
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty(rewards.shape[0])
    acc = 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = float(rewards[t]) + gamma * acc
        out[t] = acc
    return out


def masked_returns(rewards, mask, gamma):
    rewards = np.asarray(rewards, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    out = np.empty(rewards.shape[0])
    acc = 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = float(rewards[t]) * float(mask[t]) + gamma * acc
        out[t] = acc
    return out


def gae_advantages(rewards, values, gamma, lam, last_value=0.0):
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = rewards.shape[0]
    out = np.empty(n)
    acc = 0.0
    next_v = last_value
    for t in range(n - 1, -1, -1):
        delta = float(rewards[t]) + gamma * next_v - float(values[t])
        acc = delta + gamma * lam * acc
        out[t] = acc
        next_v = float(values[t])
    return out


def _blocked(tiles, x, y, has_key):
    h, w = tiles.shape
    if x < 0 or y < 0 or x >= w or y >= h:
        return True
    t = tiles[y, x]
    return t == WALL or (t == LOCK and not has_key)


def _touch(tiles, x, y):
    h, w = tiles.shape
    if x < 0 or y < 0 or x >= w or y >= h:
        return 1 << WALL
    return 1 << int(tiles[y, x])


def krazy_move(tiles, x, y, dx, dy, has_key, teleporters):
    """Resolve one move: blocking, ice sliding, then teleport on landing.

    Returns ``(x, y, touched_bits)`` where bit ``k`` is set when a tile of
    code ``k`` was entered or bumped.  ``teleporters`` is ``(x1, y1, x2, y2)``
    or ``(-1, -1, -1, -1)``.
    """
    h, w = tiles.shape
    nx, ny = x + dx, y + dy
    if _blocked(tiles, nx, ny, has_key):
        return x, y, _touch(tiles, nx, ny)
    x, y = nx, ny
    touched = _touch(tiles, x, y)
    slides = 0
    while tiles[y, x] == ICE:
        nx, ny = x + dx, y + dy
        if _blocked(tiles, nx, ny, has_key):
            touched |= _touch(tiles, nx, ny)
            break
        x, y = nx, ny
        touched |= _touch(tiles, x, y)
        slides += 1
        if slides > w + h:
            raise RuntimeError("ice slide did not terminate")
    if tiles[y, x] == TELEPORTER and teleporters[0] >= 0:
        x1, y1, x2, y2 = teleporters
        if x == x1 and y == y1:
            x, y = x2, y2
        elif x == x2 and y == y2:
            x, y = x1, y1
    return x, y, touched


def encode_window(tiles, x, y, radius, channel_of, out):
    """One-hot encode the (2r+1)^2 window centred on (x, y) into ``out``.

    Out-of-bounds cells read as wall; the centre cell is the agent channel
    only; normal tiles (``channel_of == -1``) are all-zero blocks.
    """
    h, w = tiles.shape
    out[:] = 0.0
    k = 0
    for yy in range(y - radius, y + radius + 1):
        for xx in range(x - radius, x + radius + 1):
            base = k * N_CHANNELS
            if xx == x and yy == y:
                out[base + AGENT_CHANNEL] = 1.0
            else:
                code = WALL if (xx < 0 or yy < 0 or xx >= w or yy >= h) else int(tiles[yy, xx])
                ch = channel_of[code]
                if ch >= 0:
                    out[base + ch] = 1.0
            k += 1
    return out


def encode_grid(tiles, x, y, channel_of, out):
    h, w = tiles.shape
    out[:] = 0.0
    k = 0
    for yy in range(h):
        for xx in range(w):
            base = k * N_CHANNELS
            if xx == x and yy == y:
                out[base + AGENT_CHANNEL] = 1.0
            else:
                ch = channel_of[int(tiles[yy, xx])]
                if ch >= 0:
                    out[base + ch] = 1.0
            k += 1
    return out
