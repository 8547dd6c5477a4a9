"""Compiled inner loops for the Frank-Wolfe solvers.

A problem is described column-wise: a *column* is either an enumerated path
(path mode) or a link of the turn-expanded graph (link mode).  Each column
touches a set of *resources* (edges and intersections, CSR ``col_ptr`` /
``col_res``) and carries a constant offset (the incentive).  Resource costs use
the uniform form ``poly(x) + bpr_coef * (x / cap)**pow``, optionally continued
linearly past a breakpoint ``brk``.
"""

import heapq

import numpy as np
from numba import njit

HARMONIC = 0
EXACT = 1
CONJUGATE = 2
AWAY = 3
BICONJUGATE = 4

UE = 0
SO = 1

PATH_MODE = 0
LINK_MODE = 1

BISECTION_STEPS = 60
MAX_CONJUGATE_WEIGHT = 0.99999


@njit(cache=True)
def _smooth(i, x, poly, bc, bcap, bpow):
    """(value, first, second derivative, integral from 0) of the smooth part."""
    w = poly.shape[1]
    c = 0.0
    d1 = 0.0
    d2 = 0.0
    integ = 0.0
    for k in range(w - 1, -1, -1):
        c = c * x + poly[i, k]
        integ = integ * x + poly[i, k] / (k + 1.0)
        if k >= 1:
            d1 = d1 * x + k * poly[i, k]
        if k >= 2:
            d2 = d2 * x + k * (k - 1.0) * poly[i, k]
    integ *= x
    if bc[i] != 0.0:
        r = x / bcap[i]
        p = bpow[i]
        c += bc[i] * r**p
        integ += bc[i] * bcap[i] / (p + 1.0) * r ** (p + 1.0)
        if p != 0.0:
            d1 += bc[i] * p / bcap[i] * r ** (p - 1.0)
        if p > 1.0:
            d2 += bc[i] * p * (p - 1.0) / bcap[i] ** 2 * r ** (p - 2.0)
    return c, d1, d2, integ


@njit(cache=True)
def resource_terms(i, x, poly, bc, bcap, bpow, brk):
    """Cost terms of resource ``i`` at flow ``x``; past ``brk[i]`` the cost
    continues along its tangent line."""
    b = brk[i]
    if x <= b:
        return _smooth(i, x, poly, bc, bcap, bpow)
    c, d1, _, integ = _smooth(i, b, poly, bc, bcap, bpow)
    t = x - b
    return c + d1 * t, d1, 0.0, integ + c * t + 0.5 * d1 * t * t


@njit(cache=True)
def res_costs(x, poly, bc, bcap, bpow, brk):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = resource_terms(i, x[i], poly, bc, bcap, bpow, brk)[0]
    return out


@njit(cache=True)
def res_derivs(x, poly, bc, bcap, bpow, brk):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = resource_terms(i, x[i], poly, bc, bcap, bpow, brk)[1]
    return out


@njit(cache=True)
def res_second(x, poly, bc, bcap, bpow, brk):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = resource_terms(i, x[i], poly, bc, bcap, bpow, brk)[2]
    return out


@njit(cache=True)
def res_integrals(x, poly, bc, bcap, bpow, brk):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = resource_terms(i, x[i], poly, bc, bcap, bpow, brk)[3]
    return out


@njit(cache=True)
def to_resources(colflow, col_ptr, col_res, n_res):
    out = np.zeros(n_res)
    for j in range(colflow.shape[0]):
        f = colflow[j]
        if f != 0.0:
            for k in range(col_ptr[j], col_ptr[j + 1]):
                out[col_res[k]] += f
    return out


@njit(cache=True)
def column_values(resval, col_ptr, col_res, col_const):
    n = col_const.shape[0]
    out = np.empty(n)
    for j in range(n):
        acc = col_const[j]
        for k in range(col_ptr[j], col_ptr[j + 1]):
            acc += resval[col_res[k]]
        out[j] = acc
    return out


@njit(cache=True)
def gradient(xr, kind, poly, bc, bcap, bpow, brk):
    c = res_costs(xr, poly, bc, bcap, bpow, brk)
    if kind == SO:
        c = c + xr * res_derivs(xr, poly, bc, bcap, bpow, brk)
    return c


@njit(cache=True)
def hessian_diag(xr, kind, poly, bc, bcap, bpow, brk):
    d1 = res_derivs(xr, poly, bc, bcap, bpow, brk)
    if kind == SO:
        return 2.0 * d1 + xr * res_second(xr, poly, bc, bcap, bpow, brk)
    return d1


@njit(cache=True)
def objective(colflow, xr, col_const, kind, poly, bc, bcap, bpow, brk):
    lin = 0.0
    for j in range(colflow.shape[0]):
        lin += col_const[j] * colflow[j]
    if kind == SO:
        return np.sum(res_costs(xr, poly, bc, bcap, bpow, brk) * xr) + lin
    return np.sum(res_integrals(xr, poly, bc, bcap, bpow, brk)) + lin


@njit(cache=True)
def dijkstra(src, cost, csr_start, csr_links, link_head, n_states):
    """Label-setting shortest paths; equal-distance ties keep the smaller link id."""
    dist = np.full(n_states, np.inf)
    pred = np.full(n_states, -1, dtype=np.int64)
    done = np.zeros(n_states, dtype=np.bool_)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while len(heap) > 0:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for k in range(csr_start[u], csr_start[u + 1]):
            l = csr_links[k]
            v = link_head[l]
            nd = d + cost[l]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = l
                heapq.heappush(heap, (nd, v))
            elif nd == dist[v] and l < pred[v] and not done[v]:
                pred[v] = l
    return dist, pred


@njit(cache=True)
def aon_links(colcost, od_origin, od_dest, od_demand, csr_start, csr_links, link_head, link_tail, n_states):
    """All-or-nothing loading on the expanded graph; ODs must be sorted by origin.

    Returns link flows and the shortest-path lower bound sum_od D * pi_od.
    The bound is -1 when a destination is unreachable and -2 when negative
    link costs break the shortest-path tree.
    """
    y = np.zeros(colcost.shape[0])
    bound = 0.0
    n_od = od_origin.shape[0]
    current = -1
    dist = np.empty(0)
    pred = np.empty(0, dtype=np.int64)
    for k in range(n_od):
        dem = od_demand[k]
        if dem <= 0.0:
            continue
        if od_origin[k] != current:
            current = od_origin[k]
            dist, pred = dijkstra(current, colcost, csr_start, csr_links, link_head, n_states)
        t = od_dest[k]
        if not np.isfinite(dist[t]):
            return y, -1.0
        bound += dem * dist[t]
        steps = 0
        while t != current:
            l = pred[t]
            y[l] += dem
            t = link_tail[l]
            steps += 1
            if steps > n_states:
                # predecessor cycle: only possible with negative link costs
                return y, -2.0
    return y, bound


@njit(cache=True)
def aon_paths(colcost, od_start, od_demand):
    """Route every OD on its cheapest path; ties go to the first enumerated path."""
    y = np.zeros(colcost.shape[0])
    bound = 0.0
    for k in range(od_start.shape[0] - 1):
        best = od_start[k]
        for j in range(od_start[k] + 1, od_start[k + 1]):
            if colcost[j] < colcost[best]:
                best = j
        y[best] = od_demand[k]
        bound += od_demand[k] * colcost[best]
    return y, bound


@njit(cache=True)
def _slope(gamma, xr, dr, lin, kind, poly, bc, bcap, bpow, brk):
    g = gradient(xr + gamma * dr, kind, poly, bc, bcap, bpow, brk)
    return np.sum(g * dr) + lin


@njit(cache=True)
def line_search(xr, dr, lin, gmax, kind, poly, bc, bcap, bpow, brk):
    """Minimize the convex restriction on [0, gmax] by bisection on its slope."""
    if _slope(gmax, xr, dr, lin, kind, poly, bc, bcap, bpow, brk) <= 0.0:
        return gmax
    if _slope(0.0, xr, dr, lin, kind, poly, bc, bcap, bpow, brk) >= 0.0:
        return 0.0
    lo = 0.0
    hi = gmax
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if _slope(mid, xr, dr, lin, kind, poly, bc, bcap, bpow, brk) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-16 * gmax:
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _conjugate_point(x, xr, y, s1, kind, col_ptr, col_res, n_res, poly, bc, bcap, bpow, brk):
    """Mix the previous direction point with the new vertex so the two search
    directions are conjugate w.r.t. the diagonal Hessian."""
    h = hessian_diag(xr, kind, poly, bc, bcap, bpow, brk)
    sr = to_resources(s1, col_ptr, col_res, n_res) - xr
    yr = to_resources(y, col_ptr, col_res, n_res)
    num = np.sum(sr * h * (yr - xr))
    den = np.sum(sr * h * (yr - xr - sr))
    alpha = 0.0
    if den != 0.0:
        alpha = min(max(num / den, 0.0), MAX_CONJUGATE_WEIGHT)
    return alpha * s1 + (1.0 - alpha) * y


@njit(cache=True)
def _biconjugate_point(x, xr, y, s1, s2, tau, kind, col_ptr, col_res, n_res, poly, bc, bcap, bpow, brk):
    """Direction point conjugate to the last two search directions."""
    h = hessian_diag(xr, kind, poly, bc, bcap, bpow, brk)
    s1r = to_resources(s1, col_ptr, col_res, n_res)
    s2r = to_resources(s2, col_ptr, col_res, n_res)
    yr = to_resources(y, col_ptr, col_res, n_res) - xr
    a = tau * s1r + (1.0 - tau) * s2r - xr
    z = s1r - xr
    mu = 0.0
    den = np.sum(h * a * (s2r - s1r))
    if den != 0.0:
        mu = max(0.0, -np.sum(h * a * yr) / den)
    nu = 0.0
    den = np.sum(h * z * z)
    if den != 0.0:
        nu = max(0.0, -np.sum(h * z * yr) / den + mu * tau / (1.0 - tau))
    b0 = 1.0 / (1.0 + nu + mu)
    return b0 * y + nu * b0 * s1 + mu * b0 * s2


@njit(cache=True)
def frank_wolfe(
    x0, mode, kind, rule, tol, max_iter,
    col_ptr, col_res, col_const, n_res, poly, bc, bcap, bpow, brk,
    od_start, od_demand,
    od_origin, od_dest, csr_start, csr_links, link_head, link_tail, n_states,
):
    """Frank-Wolfe on column flows.  ``x0`` empty means start from AON at zero flow.

    Returns (x, gap, iterations, trace[obj, social, gap], status) where status is
    0 converged, 1 iteration cap, 2 unreachable destination, 3 negative costs.
    """
    n_col = col_const.shape[0]
    trace = np.full((max_iter + 1, 3), np.nan)

    def direction(cc):
        if mode == PATH_MODE:
            return aon_paths(cc, od_start, od_demand)
        return aon_links(cc, od_origin, od_dest, od_demand, csr_start, csr_links, link_head, link_tail, n_states)

    if x0.shape[0] == 0:
        g0 = gradient(np.zeros(n_res), kind, poly, bc, bcap, bpow, brk)
        x, b0 = direction(column_values(g0, col_ptr, col_res, col_const))
        if b0 < 0.0:
            return x, np.inf, 0, trace[:0], 2
    else:
        x = x0.copy()

    s1 = np.zeros(n_col)
    s2 = np.zeros(n_col)
    n_hist = 0
    prev_gamma = 1.0
    gap = np.inf
    it = 0
    status = 1
    while True:
        xr = to_resources(x, col_ptr, col_res, n_res)
        gres = gradient(xr, kind, poly, bc, bcap, bpow, brk)
        cc = column_values(gres, col_ptr, col_res, col_const)
        total = np.sum(cc * x)
        y, bound = direction(cc)
        if bound < 0.0:
            status = 2 if bound == -1.0 else 3
            break
        if total > 0.0:
            gap = max(0.0, (total - bound) / total)
        else:
            gap = 0.0 if total - bound <= 0.0 else np.inf
        obj = objective(x, xr, col_const, kind, poly, bc, bcap, bpow, brk)
        if kind == UE:
            social = total
        else:
            social = obj
        trace[it, 0] = obj
        trace[it, 1] = social
        trace[it, 2] = gap
        if gap <= tol:
            status = 0
            break
        if it >= max_iter:
            break
        it += 1

        d = y - x
        gmax = 1.0
        drop = -1
        if rule == AWAY and mode == PATH_MODE:
            # away vertex: every OD on its most expensive used path
            a = np.full(od_start.shape[0] - 1, -1, dtype=np.int64)
            for k in range(od_start.shape[0] - 1):
                for j in range(od_start[k], od_start[k + 1]):
                    if x[j] > 0.0 and (a[k] < 0 or cc[j] > cc[a[k]]):
                        a[k] = j
            da = np.zeros(n_col)
            amax = np.inf
            for k in range(od_start.shape[0] - 1):
                if a[k] < 0:
                    continue
                for j in range(od_start[k], od_start[k + 1]):
                    da[j] = x[j]
                da[a[k]] -= od_demand[k]
                rest = od_demand[k] - x[a[k]]
                if rest > 0.0:
                    lim = x[a[k]] / rest
                    if lim < amax:
                        amax = lim
                        drop = k
            if np.isfinite(amax) and -np.sum(cc * da) > -np.sum(cc * d):
                d = da
                gmax = amax
                drop = a[drop]
            else:
                drop = -1
        elif rule == CONJUGATE or rule == BICONJUGATE:
            if n_hist == 0 or prev_gamma >= 1.0:
                s = y.copy()
                n_hist = 0
            elif n_hist == 1 or rule == CONJUGATE:
                s = _conjugate_point(x, xr, y, s1, kind, col_ptr, col_res, n_res, poly, bc, bcap, bpow, brk)
            else:
                s = _biconjugate_point(
                    x, xr, y, s1, s2, prev_gamma, kind, col_ptr, col_res, n_res, poly, bc, bcap, bpow, brk
                )
            if np.sum(cc * (s - x)) >= 0.0:
                # not a descent direction: restart from the plain Frank-Wolfe vertex
                s = y.copy()
                n_hist = 0
            s2 = s1
            s1 = s
            n_hist = min(n_hist + 1, 2)
            d = s - x

        if rule == HARMONIC:
            gamma = 2.0 / (it + 2.0)
        else:
            dr = to_resources(d, col_ptr, col_res, n_res)
            lin = np.sum(col_const * d)
            gamma = line_search(xr, dr, lin, gmax, kind, poly, bc, bcap, bpow, brk)
        prev_gamma = gamma
        x = x + gamma * d
        if drop >= 0 and gamma >= gmax:
            x[drop] = 0.0
        for j in range(n_col):
            if x[j] < 0.0:
                x[j] = 0.0
    return x, gap, it, trace[: it + 1], status
