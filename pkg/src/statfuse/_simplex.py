"""Transportation simplex kernels (numba).

The basis is a spanning tree over ``m`` row nodes (``0..m-1``) and ``n``
column nodes (``m..m+n-1``) with ``m + n - 1`` arcs, each arc carrying flow
from a row to a column. Potentials satisfy ``u_i + v_j = c_ij`` on basic
arcs, with the row-0 potential pinned at zero.
"""

import numpy as np
from numba import njit

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1
STATUS_BAD_TREE = 2


@njit(cache=True)
def _first_alive(order, ptr, alive):
    p = ptr
    while p < order.shape[0] and not alive[order[p]]:
        p += 1
    return p


@njit(cache=True)
def vogel(c, a, b):
    """Vogel approximation; returns basic arcs ``(rows, cols, flows)``.

    Exactly one line is retired per allocation (the row when supply and
    demand tie), so the ``m + n - 1`` allocations always form a tree.
    Penalty ties go to the lowest row index, then the lowest column index.
    """
    m, n = c.shape
    s = a.copy()
    d = b.copy()
    row_ord = np.empty((m, n), dtype=np.int64)
    for i in range(m):
        row_ord[i] = np.argsort(c[i], kind="mergesort")
    col_ord = np.empty((n, m), dtype=np.int64)
    for j in range(n):
        col_ord[j] = np.argsort(c[:, j], kind="mergesort")
    row_alive = np.ones(m, dtype=np.bool_)
    col_alive = np.ones(n, dtype=np.bool_)
    r1 = np.zeros(m, dtype=np.int64)
    r2 = np.ones(m, dtype=np.int64)
    c1 = np.zeros(n, dtype=np.int64)
    c2 = np.ones(n, dtype=np.int64)

    nb = m + n - 1
    ar = np.empty(nb, dtype=np.int64)
    ac = np.empty(nb, dtype=np.int64)
    af = np.empty(nb, dtype=np.float64)
    k = 0
    nr = m
    nc = n
    while nr > 1 and nc > 1:
        best = -1.0
        line = -1
        for i in range(m):
            if not row_alive[i]:
                continue
            r1[i] = _first_alive(row_ord[i], r1[i], col_alive)
            if r2[i] <= r1[i]:
                r2[i] = r1[i] + 1
            r2[i] = _first_alive(row_ord[i], r2[i], col_alive)
            j1 = row_ord[i, r1[i]]
            pen = c[i, row_ord[i, r2[i]]] - c[i, j1] if r2[i] < n else c[i, j1]
            if pen > best:
                best = pen
                line = i
        for j in range(n):
            if not col_alive[j]:
                continue
            c1[j] = _first_alive(col_ord[j], c1[j], row_alive)
            if c2[j] <= c1[j]:
                c2[j] = c1[j] + 1
            c2[j] = _first_alive(col_ord[j], c2[j], row_alive)
            i1 = col_ord[j, c1[j]]
            pen = c[col_ord[j, c2[j]], j] - c[i1, j] if c2[j] < m else c[i1, j]
            if pen > best:
                best = pen
                line = m + j
        if line < m:
            i = line
            j = row_ord[i, r1[i]]
        else:
            j = line - m
            i = col_ord[j, c1[j]]
        x = min(s[i], d[j])
        ar[k] = i
        ac[k] = j
        af[k] = x
        k += 1
        if s[i] <= d[j]:
            d[j] -= s[i]
            s[i] = 0.0
            row_alive[i] = False
            nr -= 1
        else:
            s[i] -= d[j]
            d[j] = 0.0
            col_alive[j] = False
            nc -= 1
    if nr == 1:
        i = 0
        while not row_alive[i]:
            i += 1
        for j in range(n):
            if col_alive[j]:
                ar[k] = i
                ac[k] = j
                af[k] = d[j]
                k += 1
    else:
        j = 0
        while not col_alive[j]:
            j += 1
        for i in range(m):
            if row_alive[i]:
                ar[k] = i
                ac[k] = j
                af[k] = s[i]
                k += 1
    return ar, ac, af


@njit(cache=True)
def northwest(a, b):
    m = a.shape[0]
    n = b.shape[0]
    nb = m + n - 1
    ar = np.empty(nb, dtype=np.int64)
    ac = np.empty(nb, dtype=np.int64)
    af = np.empty(nb, dtype=np.float64)
    s = a.copy()
    d = b.copy()
    i = 0
    j = 0
    k = 0
    while k < nb:
        x = min(s[i], d[j])
        ar[k] = i
        ac[k] = j
        af[k] = x
        k += 1
        if (s[i] <= d[j] and i < m - 1) or j == n - 1:
            d[j] -= s[i]
            s[i] = 0.0
            i += 1
        else:
            s[i] -= d[j]
            d[j] = 0.0
            j += 1
    return ar, ac, af


@njit(cache=True)
def _tree(c, ar, ac, m, n, parent, parc, depth, order, pot):
    """Rebuild parent pointers, BFS order and potentials; returns nodes reached."""
    nn = m + n
    nb = ar.shape[0]
    deg = np.zeros(nn + 1, dtype=np.int64)
    for e in range(nb):
        deg[ar[e] + 1] += 1
        deg[m + ac[e] + 1] += 1
    for v in range(nn):
        deg[v + 1] += deg[v]
    fill = deg[:-1].copy()
    adj = np.empty(2 * nb, dtype=np.int64)
    for e in range(nb):
        r = ar[e]
        q = m + ac[e]
        adj[fill[r]] = e
        fill[r] += 1
        adj[fill[q]] = e
        fill[q] += 1
    for v in range(nn):
        parent[v] = -2
    parent[0] = -1
    parc[0] = -1
    depth[0] = 0
    pot[0] = 0.0
    order[0] = 0
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        head += 1
        for t in range(deg[v], deg[v + 1]):
            e = adj[t]
            if e == parc[v]:
                continue
            w = m + ac[e] if v < m else ar[e]
            if parent[w] != -2:
                continue
            parent[w] = v
            parc[w] = e
            depth[w] = depth[v] + 1
            # u_i + v_j = c_ij
            pot[w] = c[ar[e], ac[e]] - pot[v]
            order[tail] = w
            tail += 1
    return tail


@njit(cache=True)
def _peel(a, b, ar, ac, af, m, n, parent, parc, order):
    """Recompute basic flows exactly from the marginals (leaves first)."""
    nn = m + n
    surplus = np.empty(nn, dtype=np.float64)
    for i in range(m):
        surplus[i] = a[i]
    for j in range(n):
        surplus[m + j] = -b[j]
    for t in range(nn - 1, 0, -1):
        v = order[t]
        e = parc[v]
        f = surplus[v] if v < m else -surplus[v]
        af[e] = f
        surplus[parent[v]] += surplus[v]
    return surplus[0]


@njit(cache=True)
def simplex(c, a, b, ar, ac, af, eps, max_iter, block, stall_limit):
    """Run primal pivots from the basis ``(ar, ac, af)`` (modified in place).

    Entering arcs come from block pricing (most negative reduced cost in the
    first block that contains one, ties to the lowest index). The leaving
    arc follows the strongly-feasible-tree rule. After ``stall_limit``
    consecutive degenerate pivots, pricing switches to Bland's rule
    (lowest-index improving arc, lowest-index blocking arc) until the next
    non-degenerate pivot.

    Returns ``(status, iterations, degenerate_pivots, u, v)``.
    """
    m, n = c.shape
    nn = m + n
    mn = m * n
    parent = np.empty(nn, dtype=np.int64)
    parc = np.empty(nn, dtype=np.int64)
    depth = np.empty(nn, dtype=np.int64)
    order = np.empty(nn, dtype=np.int64)
    pot = np.empty(nn, dtype=np.float64)
    u = np.empty(m, dtype=np.float64)
    v = np.empty(n, dtype=np.float64)

    it = 0
    degenerate = 0
    stall = 0
    bland = False
    pos = 0
    status = STATUS_OPTIMAL
    while True:
        if _tree(c, ar, ac, m, n, parent, parc, depth, order, pot) != nn:
            status = STATUS_BAD_TREE
            break
        for i in range(m):
            u[i] = pot[i]
        for j in range(n):
            v[j] = pot[m + j]

        ent = -1
        if bland:
            for idx in range(mn):
                i = idx // n
                j = idx - i * n
                if c[i, j] - u[i] - v[j] < -eps:
                    ent = idx
                    break
        else:
            best = -eps
            cnt = 0
            idx = pos
            for _ in range(mn):
                i = idx // n
                j = idx - i * n
                rc = c[i, j] - u[i] - v[j]
                if rc < best or (rc == best and ent >= 0 and idx < ent):
                    best = rc
                    ent = idx
                cnt += 1
                idx += 1
                if idx == mn:
                    idx = 0
                if cnt == block:
                    if ent >= 0:
                        break
                    cnt = 0
            pos = idx
        if ent < 0:
            break
        if it >= max_iter:
            status = STATUS_MAX_ITER
            break
        it += 1

        ei = ent // n
        ej = ent - ei * n
        first = ei
        second = m + ej
        x1 = first
        x2 = second
        while x1 != x2:
            if depth[x1] > depth[x2]:
                x1 = parent[x1]
            elif depth[x2] > depth[x1]:
                x2 = parent[x2]
            else:
                x1 = parent[x1]
                x2 = parent[x2]
        join = x1

        delta = np.inf
        out = -1
        out_key = mn
        # recipient side: rows are left via their parent arc
        x = first
        while x != join:
            if x < m:
                e = parc[x]
                f = af[e]
                key = ar[e] * n + ac[e]
                if bland:
                    if f < delta or (f == delta and key < out_key):
                        delta = f
                        out = e
                        out_key = key
                elif f < delta:
                    delta = f
                    out = e
            x = parent[x]
        x = second
        while x != join:
            if x >= m:
                e = parc[x]
                f = af[e]
                key = ar[e] * n + ac[e]
                if bland:
                    if f < delta or (f == delta and key < out_key):
                        delta = f
                        out = e
                        out_key = key
                elif f <= delta:
                    delta = f
                    out = e
            x = parent[x]
        if out < 0:
            status = STATUS_BAD_TREE
            break

        if delta > 0.0:
            x = first
            while x != join:
                e = parc[x]
                if x < m:
                    af[e] -= delta
                else:
                    af[e] += delta
                x = parent[x]
            x = second
            while x != join:
                e = parc[x]
                if x >= m:
                    af[e] -= delta
                else:
                    af[e] += delta
                x = parent[x]
            stall = 0
            bland = False
        else:
            degenerate += 1
            stall += 1
            if stall > stall_limit:
                bland = True
        ar[out] = ei
        ac[out] = ej
        af[out] = delta

    if status == STATUS_OPTIMAL:
        _peel(a, b, ar, ac, af, m, n, parent, parc, order)
    return status, it, degenerate, u, v
