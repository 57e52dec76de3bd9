"""Hot kernels, compiled with numba when available.

Every kernel exists twice: a loop version that numba compiles and a
vectorised numpy version. ``SDRECOG_NO_NUMBA=1`` (or a missing numba
install) selects the numpy path. Both paths return identical results; the
test-suite checks that directly.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a soft dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("SDRECOG_NO_NUMBA", "") not in ("1", "true", "yes")


def _njit(func):
    if numba is None:
        return func
    return numba.njit(cache=True, nogil=True)(func)


# --------------------------------------------------------------------------
# sliding-window scan
#
# Ring layout shared by both paths: while the window is filling, bits live in
# ring[:filled] and head == filled. Once full, head indexes the oldest bit,
# which is also the slot the next bit overwrites.
# --------------------------------------------------------------------------

def _scan_loop(bits, ring, head, filled, total, below_max, above_min):
    n = ring.shape[0]
    for j in range(bits.shape[0]):
        b = bits[j]
        if filled == n:
            total -= ring[head]
        else:
            filled += 1
        ring[head] = b
        total += b
        head += 1
        if head == n:
            head = 0
        if filled == n and (total <= below_max or total >= above_min):
            return j, head, filled, total
    return -1, head, filled, total


scan_numba = _njit(_scan_loop)


def scan_numpy(bits, ring, head, filled, total, below_max, above_min):
    n = ring.shape[0]
    if filled == n:
        hist = np.concatenate((ring[head:], ring[:head]))
    else:
        hist = ring[:filled].copy()
    h = hist.shape[0]
    seq = np.concatenate((hist, bits))
    csum = np.zeros(seq.shape[0] + 1, dtype=np.int64)
    np.cumsum(seq, out=csum[1:])

    ends = np.arange(h + 1, h + bits.shape[0] + 1)
    sums = csum[ends] - csum[np.maximum(ends - n, 0)]
    hit = (ends >= n) & ((sums <= below_max) | (sums >= above_min))
    idx = np.flatnonzero(hit)
    trigger = int(idx[0]) if idx.size else -1
    consumed = trigger + 1 if trigger >= 0 else bits.shape[0]

    end = h + consumed
    if end >= n:
        ring[:] = seq[end - n:end]
        head, filled = 0, n
    else:
        ring[:end] = seq[:end]
        head, filled = end, end
    total = int(csum[end] - csum[max(end - n, 0)])
    return trigger, head, filled, total


def scan(bits, ring, head, filled, total, below_max, above_min):
    """Push ``bits`` through a sliding window until the count leaves the band.

    The window is triggered when its count of ones is ``<= below_max`` or
    ``>= above_min`` (checked only once the window is full). Scanning stops at
    the first trigger; ``ring`` is updated in place.

    Returns:
        ``(trigger, head, filled, total)`` where ``trigger`` is the offset
        into ``bits`` of the triggering bit, or -1.
    """
    fn = scan_numba if USE_NUMBA else scan_numpy
    j, head, filled, total = fn(bits, ring, int(head), int(filled), int(total),
                                int(below_max), int(above_min))
    return int(j), int(head), int(filled), int(total)


# --------------------------------------------------------------------------
# passive four-detector receiver, one channel use per row of ``u``
#
# u[:, 0] picks Alice's state via ``state_cdf``, u[:, 1] < 0.5 means Bob's
# passive beamsplitter chose the matching basis, u[:, 2] < eff[state] means
# the detector clicked. Only states flagged in ``keep`` contribute key bits.
# State index order is Z0, Z1, X0, X1, so the key bit is ``state & 1``.
# --------------------------------------------------------------------------

def _rounds_loop(u, state_cdf, eff, keep, need, out):
    produced = 0
    for r in range(u.shape[0]):
        if produced == need:
            return produced, r
        x = u[r, 0]
        s = 0
        while s < 3 and x >= state_cdf[s]:
            s += 1
        if u[r, 1] < 0.5 and u[r, 2] < eff[s] and keep[s]:
            out[produced] = s
            produced += 1
    return produced, u.shape[0]


rounds_numba = _njit(_rounds_loop)


def rounds_numpy(u, state_cdf, eff, keep, need, out):
    states = np.searchsorted(state_cdf[:3], u[:, 0], side="right")
    ok = (u[:, 1] < 0.5) & (u[:, 2] < eff[states]) & keep[states]
    idx = np.flatnonzero(ok)
    if idx.size >= need:
        idx = idx[:need]
        consumed = int(idx[-1]) + 1 if need > 0 else 0
    else:
        consumed = u.shape[0]
    out[:idx.size] = states[idx]
    return idx.size, consumed


def detector_rounds(u, state_cdf, eff, keep, need):
    """Run channel uses until ``need`` sifted key bits exist or ``u`` runs out.

    Returns:
        ``(states, rounds_consumed)``; ``states`` holds the index of the
        clicking detector for each produced key bit.
    """
    out = np.empty(need, dtype=np.int8)
    fn = rounds_numba if USE_NUMBA else rounds_numpy
    produced, consumed = fn(u, state_cdf, eff, keep, int(need), out)
    return out[:produced], int(consumed)
