"""Compiled toppling loops.

All kernels mutate ``chips`` and ``odometer`` in place and never topple a
site on the outer layer of the array; callers grow the box when such a site
ends up unstable. Flat kernels take the C-order neighbour offsets and a
``topplable`` mask so one implementation serves every dimension.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def sweep_2d(chips, odometer):
    n0, n1 = chips.shape
    sweeps = 0
    # rows that toppled last sweep, widened by one, bound where chips can be
    first = 1
    last = n0 - 2
    while True:
        sweeps += 1
        forward = sweeps % 2 == 1
        active = False
        lo = n0
        hi = -1
        for a in range(first, last + 1):
            i = a if forward else first + last - a
            toppled = False
            for b in range(1, n1 - 1):
                j = b if forward else n1 - 1 - b
                x = chips[i, j]
                if x >= 4:
                    t = x >> 2
                    chips[i, j] = x & 3
                    odometer[i, j] += t
                    chips[i - 1, j] += t
                    chips[i + 1, j] += t
                    chips[i, j - 1] += t
                    chips[i, j + 1] += t
                    toppled = True
            if toppled:
                active = True
                lo = min(lo, i)
                hi = max(hi, i)
        if not active:
            return sweeps
        first = max(1, lo - 1)
        last = min(n0 - 2, hi + 1)


@njit(cache=True, nogil=True)
def sweep_3d(chips, odometer):
    n0, n1, n2 = chips.shape
    sweeps = 0
    first = 1
    last = n0 - 2
    while True:
        sweeps += 1
        forward = sweeps % 2 == 1
        active = False
        lo = n0
        hi = -1
        for a in range(first, last + 1):
            i = a if forward else first + last - a
            toppled = False
            for b in range(1, n1 - 1):
                j = b if forward else n1 - 1 - b
                for c in range(1, n2 - 1):
                    l = c if forward else n2 - 1 - c
                    x = chips[i, j, l]
                    if x >= 6:
                        t = x // 6
                        chips[i, j, l] = x - 6 * t
                        odometer[i, j, l] += t
                        chips[i - 1, j, l] += t
                        chips[i + 1, j, l] += t
                        chips[i, j - 1, l] += t
                        chips[i, j + 1, l] += t
                        chips[i, j, l - 1] += t
                        chips[i, j, l + 1] += t
                        toppled = True
            if toppled:
                active = True
                lo = min(lo, i)
                hi = max(hi, i)
        if not active:
            return sweeps
        first = max(1, lo - 1)
        last = min(n0 - 2, hi + 1)


@njit(cache=True, nogil=True)
def fifo(chips, odometer, topplable, offsets, threshold):
    """Worklist stabilization with bulk toppling; returns the pop count."""
    size = chips.size
    queue = np.empty(size, np.int64)
    queued = np.zeros(size, np.bool_)
    head = 0
    tail = 0
    pending = 0
    for p in range(size):
        if topplable[p] and chips[p] >= threshold:
            queue[tail] = p
            tail += 1
            queued[p] = True
            pending += 1
    if tail == size:
        tail = 0
    pops = 0
    while pending > 0:
        p = queue[head]
        head += 1
        if head == size:
            head = 0
        pending -= 1
        queued[p] = False
        t = chips[p] // threshold
        if t <= 0:
            continue
        pops += 1
        chips[p] -= threshold * t
        odometer[p] += t
        for o in offsets:
            q = p + o
            chips[q] += t
            if topplable[q] and not queued[q] and chips[q] >= threshold:
                queued[q] = True
                queue[tail] = q
                tail += 1
                if tail == size:
                    tail = 0
                pending += 1
    return pops


@njit(cache=True)
def seed_rng(seed):
    np.random.seed(seed)


@njit(cache=True, nogil=True)
def random_legal(chips, odometer, topplable, offsets, threshold, record):
    """Single topplings, each at a uniformly chosen unstable site.

    The sites toppled are written to ``record`` while it has room. Returns
    ``(steps, recorded)``; ``recorded < steps`` signals overflow.
    """
    size = chips.size
    members = np.empty(size, np.int64)
    where = np.full(size, -1, np.int64)
    count = 0
    for p in range(size):
        if topplable[p] and chips[p] >= threshold:
            members[count] = p
            where[p] = count
            count += 1
    steps = 0
    recorded = 0
    while count > 0:
        r = np.random.randint(0, count)
        p = members[r]
        chips[p] -= threshold
        odometer[p] += 1
        if recorded < record.size:
            record[recorded] = p
            recorded += 1
        steps += 1
        if chips[p] < threshold:
            last = members[count - 1]
            members[r] = last
            where[last] = r
            where[p] = -1
            count -= 1
        for o in offsets:
            q = p + o
            chips[q] += 1
            if topplable[q] and where[q] < 0 and chips[q] >= threshold:
                members[count] = q
                where[q] = count
                count += 1
    return steps, recorded


@njit(cache=True, nogil=True)
def lower_to_certificate(guess, source, topplable, offsets, floor_value):
    """Largest ``L <= guess`` with ``source + Lap(L) >= floor_value`` on
    ``{L > 0}`` and ``L = 0`` off ``topplable``; edits ``guess`` in place."""
    size = guess.size
    degree = offsets.size
    queue = np.empty(size, np.int64)
    queued = np.zeros(size, np.bool_)
    head = 0
    tail = 0
    pending = 0
    for p in range(size):
        if not topplable[p]:
            guess[p] = 0
        elif guess[p] > 0:
            queue[tail] = p
            tail += 1
            queued[p] = True
            pending += 1
    if tail == size:
        tail = 0
    while pending > 0:
        p = queue[head]
        head += 1
        if head == size:
            head = 0
        pending -= 1
        queued[p] = False
        if guess[p] <= 0:
            continue
        total = source[p] - floor_value
        for o in offsets:
            total += guess[p + o]
        cap = total // degree
        if cap < 0:
            cap = 0
        if guess[p] > cap:
            guess[p] = cap
            for o in offsets:
                q = p + o
                if guess[q] > 0 and not queued[q]:
                    queued[q] = True
                    queue[tail] = q
                    tail += 1
                    if tail == size:
                        tail = 0
                    pending += 1


@njit(cache=True, nogil=True)
def cg_apply(p, ap, domain, offsets):
    """``ap = -Lap(p)`` on ``domain`` (zero elsewhere); returns ``<p, ap>``."""
    degree = offsets.size
    total = 0.0
    for i in range(p.size):
        if domain[i]:
            acc = degree * p[i]
            for o in offsets:
                acc -= p[i + o]
            ap[i] = acc
            total += p[i] * acc
        else:
            ap[i] = 0.0
    return total


@njit(cache=True, nogil=True)
def cg_update(u, r, p, ap, alpha, inv_diag):
    """``u += alpha p``, ``r -= alpha ap``; returns ``(<r, r> * inv_diag, max|r|)``."""
    rz = 0.0
    worst = 0.0
    for i in range(u.size):
        u[i] += alpha * p[i]
        ri = r[i] - alpha * ap[i]
        r[i] = ri
        rz += ri * ri * inv_diag
        a = abs(ri)
        if a > worst:
            worst = a
    return rz, worst


@njit(cache=True, nogil=True)
def cg_direction(p, r, beta, inv_diag):
    for i in range(p.size):
        p[i] = r[i] * inv_diag + beta * p[i]
