"""Reference (numpy) implementations of the hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; ``alloc.kernels``
picks one at import. Index 0 is the forfeit option everywhere; agents are 1..K.
"""

import itertools

import numpy as np

BACKEND = "python"


def _adjusted(reports, costs, lam):
    """Dual-adjusted reports with the forfeit column prepended: shape (n, K+1)."""
    lamc = (costs * lam).sum(axis=-1)
    adj = np.empty((reports.shape[0], reports.shape[1] + 1))
    adj[:, 0] = 0.0
    adj[:, 1:] = reports - lamc
    return adj, lamc


def _standard(reports, costs, lam):
    adj, lamc = _adjusted(reports, costs, lam)
    n = adj.shape[0]
    rows = np.arange(n)
    # argmax returns the first maximiser: smallest index wins ties, forfeit first
    win = np.argmax(adj, axis=1)
    masked = adj.copy()
    masked[rows, win] = -np.inf
    second = masked.max(axis=1)
    pay = np.zeros(n)
    sel = win > 0
    pay[sel] = lamc[rows[sel], win[sel] - 1] + second[sel]
    return win.astype(np.int64), pay


def resolve_rounds(reports, costs, lam, explore, explore_agent, price, cum, budget):
    """Run a block of rounds of the incentive-aware mechanism under a fixed dual ``lam``.

    ``cum`` (running consumed cost) is updated in place. ``explore_agent`` is 1-based.
    Returns (winners, payments, rejected).
    """
    reports = np.asarray(reports, dtype=float)
    costs = np.asarray(costs, dtype=float)
    n = reports.shape[0]
    win, pay = _standard(reports, costs, lam)
    ex = np.asarray(explore, dtype=bool)
    if ex.any():
        idx = np.nonzero(ex)[0]
        a = np.asarray(explore_agent)[idx]
        p = np.asarray(price)[idx]
        take = reports[idx, a - 1] >= p
        win[idx] = np.where(take, a, 0)
        pay[idx] = np.where(take, p, 0.0)
    rejected = np.zeros(n, dtype=np.uint8)
    d = cum.shape[0]
    for t in range(n):
        w = win[t]
        if w == 0:
            continue
        c = costs[t, w - 1]
        ok = True
        for j in range(d):
            if cum[j] + c[j] > budget[j]:
                ok = False
                break
        if ok:
            for j in range(d):
                cum[j] += c[j]
        else:
            win[t] = 0
            pay[t] = 0.0
            rejected[t] = 1
    return win, pay, rejected


def resolve_vanilla(reports, costs, lam, rho, eta, cum, budget):
    """Per-round primal-dual baseline: allocate, safety-check, then a projected dual step.

    ``lam`` and ``cum`` are updated in place. Returns (winners, payments, rejected, lam_used)
    where ``lam_used[t]`` is the dual in force during round t.
    """
    reports = np.asarray(reports, dtype=float)
    costs = np.asarray(costs, dtype=float)
    n, K = reports.shape
    d = lam.shape[0]
    upper = 1.0 / rho
    win = np.zeros(n, dtype=np.int64)
    pay = np.zeros(n)
    rejected = np.zeros(n, dtype=np.uint8)
    lam_used = np.empty((n, d))
    for t in range(n):
        lam_used[t] = lam
        w, p = _standard(reports[t:t + 1], costs[t:t + 1], lam)
        w = int(w[0])
        p = float(p[0])
        if w > 0:
            c = costs[t, w - 1]
            if any(cum[j] + c[j] > budget[j] for j in range(d)):
                w, p = 0, 0.0
                rejected[t] = 1
            else:
                for j in range(d):
                    cum[j] += c[j]
        win[t] = w
        pay[t] = p
        for j in range(d):
            cj = costs[t, w - 1, j] if w > 0 else 0.0
            x = lam[j] - eta * (rho[j] - cj)
            lam[j] = min(max(x, 0.0), upper[j])
    return win, pay, rejected, lam_used


def predicted_means(lams, reports, costs, rho, chunk=64):
    """For each candidate dual in ``lams`` (M, d): mean over archived rounds of rho - c_{argmax}.

    The argmax runs over forfeit + agents of u - lam.c with the smallest-index tie rule.
    """
    lams = np.atleast_2d(np.asarray(lams, dtype=float))
    M, d = lams.shape
    n = reports.shape[0]
    out = np.empty((M, d))
    if n == 0:
        out[:] = 0.0
        return out
    zc = np.concatenate([np.zeros((n, 1, d)), costs], axis=1)  # (n, K+1, d)
    rows = np.arange(n)
    for s in range(0, M, chunk):
        lb = lams[s:s + chunk]
        lamc = (costs[None, :, :, :] * lb[:, None, None, :]).sum(axis=-1)  # (m, n, K)
        adj = np.concatenate([np.zeros(lamc.shape[:2] + (1,)), reports[None] - lamc], axis=2)
        win = np.argmax(adj, axis=2)  # (m, n)
        chosen = zc[rows[None, :], win]  # (m, n, d)
        total = np.zeros((lb.shape[0], d))
        for t in range(n):
            total += chosen[:, t, :]
        out[s:s + chunk] = rho - total / n
    return out


def enumerate_offline(values, costs, budget, chunk=1 << 16):
    """Exact hindsight optimum by enumerating all (K+1)^T allocations.

    Allocations are visited in lexicographic order; the first strict maximiser wins.
    Returns (welfare, allocation).
    """
    values = np.asarray(values, dtype=float)
    costs = np.asarray(costs, dtype=float)
    T, K = values.shape
    d = costs.shape[2]
    zv = np.concatenate([np.zeros((T, 1)), values], axis=1)
    zc = np.concatenate([np.zeros((T, 1, d)), costs], axis=1)
    best = -np.inf
    best_alloc = np.zeros(T, dtype=np.int64)
    it = itertools.product(range(K + 1), repeat=T)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64).reshape(-1, T)
        if block.shape[0] == 0:
            break
        w = np.zeros(block.shape[0])
        c = np.zeros((block.shape[0], d))
        for t in range(T):
            w += zv[t, block[:, t]]
            c += zc[t, block[:, t]]
        feas = np.all(c <= budget, axis=1)
        if feas.any():
            wf = np.where(feas, w, -np.inf)
            k = int(np.argmax(wf))
            if wf[k] > best:
                best = float(wf[k])
                best_alloc = block[k].copy()
    return best, best_alloc
