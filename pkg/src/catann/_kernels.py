"""Numba-compiled hot paths shared by graph construction and query execution.

All kernels are `nogil` so query worker threads overlap on multi-core hosts.
Distances accumulate in float64 over float32 storage to keep orderings stable
across the kernels and the numpy oracle. Candidate pools are small sorted
arrays ordered by (distance, id); ties always resolve to the lower id.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NO_FILTER = np.empty(0, dtype=np.uint8)


# fastmath here only permits reassociation for SIMD sums; inputs are finite
# by dataset invariant, so NaN/inf semantics are not in play.
@njit(nogil=True, cache=True, inline="always", fastmath={"reassoc", "contract", "nsz"})
def _dist_sq(vectors, i, q):
    acc = 0.0
    for j in range(q.shape[0]):
        d = np.float64(vectors[i, j]) - np.float64(q[j])
        acc += d * d
    return acc


@njit(nogil=True, cache=True, inline="always", fastmath={"reassoc", "contract", "nsz"})
def _dist_sq_rows(vectors, i, j):
    acc = 0.0
    for c in range(vectors.shape[1]):
        d = np.float64(vectors[i, c]) - np.float64(vectors[j, c])
        acc += d * d
    return acc


@njit(nogil=True, cache=True)
def hash_code(normals, q):
    """Sign-pattern bucket index, first normal = most significant bit."""
    code = np.int64(0)
    for i in range(normals.shape[0]):
        acc = 0.0
        for j in range(q.shape[0]):
            acc += np.float64(normals[i, j]) * np.float64(q[j])
        code = (code << 1) | (1 if acc >= 0.0 else 0)
    return code


@njit(nogil=True, cache=True)
def beam_search(vectors, adj, deg, q, k, sp, stamp, stamp_val, eligible):
    """Greedy beam search: candidate pool capped at the k closest to q.

    The pool starts as sp (deduplicated); each round expands the closest
    unvisited candidate (ties to the lower id), merges its unseen neighbors,
    and trims back to k. Terminates when every pooled candidate is visited.

    Returns (result_ids, result_dists, hops, dist_comps, visit_ids,
    visit_dists); the visit log feeds graph construction.
    """
    use_filter = eligible.shape[0] > 0
    max_deg = adj.shape[1]
    cap = sp.shape[0] + k + max_deg + 2
    c_ids = np.empty(cap, dtype=np.int64)
    c_dists = np.empty(cap, dtype=np.float64)
    c_visited = np.zeros(cap, dtype=np.uint8)
    size = 0
    hops = 0
    dcomp = 0

    vcap = 4 * k + 64
    visit_ids = np.empty(vcap, dtype=np.int64)
    visit_dists = np.empty(vcap, dtype=np.float64)
    nvisit = 0

    # seed the pool with sp, deduplicated and filtered
    for s in range(sp.shape[0]):
        node = sp[s]
        if stamp[node] == stamp_val:
            continue
        stamp[node] = stamp_val
        if use_filter and eligible[node] == 0:
            continue
        d = _dist_sq(vectors, node, q)
        dcomp += 1
        pos = size
        while pos > 0 and (
            c_dists[pos - 1] > d or (c_dists[pos - 1] == d and c_ids[pos - 1] > node)
        ):
            c_ids[pos] = c_ids[pos - 1]
            c_dists[pos] = c_dists[pos - 1]
            c_visited[pos] = c_visited[pos - 1]
            pos -= 1
        c_ids[pos] = node
        c_dists[pos] = d
        c_visited[pos] = 0
        size += 1

    while True:
        cur_slot = -1
        for i in range(size):
            if c_visited[i] == 0:
                cur_slot = i
                break
        if cur_slot < 0:
            break
        cur = c_ids[cur_slot]
        c_visited[cur_slot] = 1
        hops += 1
        if nvisit == vcap:
            vcap *= 2
            new_ids = np.empty(vcap, dtype=np.int64)
            new_dists = np.empty(vcap, dtype=np.float64)
            new_ids[:nvisit] = visit_ids[:nvisit]
            new_dists[:nvisit] = visit_dists[:nvisit]
            visit_ids = new_ids
            visit_dists = new_dists
        visit_ids[nvisit] = cur
        visit_dists[nvisit] = c_dists[cur_slot]
        nvisit += 1

        for j in range(deg[cur]):
            nb = adj[cur, j]
            if stamp[nb] == stamp_val:
                continue
            stamp[nb] = stamp_val
            if use_filter and eligible[nb] == 0:
                continue
            d = _dist_sq(vectors, nb, q)
            dcomp += 1
            # a candidate ranked past the current k-th best can never survive
            # the end-of-round trim; skipping the insert changes nothing
            if size >= k and (
                d > c_dists[k - 1]
                or (d == c_dists[k - 1] and nb > c_ids[k - 1])
            ):
                continue
            pos = size
            while pos > 0 and (
                c_dists[pos - 1] > d
                or (c_dists[pos - 1] == d and c_ids[pos - 1] > nb)
            ):
                c_ids[pos] = c_ids[pos - 1]
                c_dists[pos] = c_dists[pos - 1]
                c_visited[pos] = c_visited[pos - 1]
                pos -= 1
            c_ids[pos] = nb
            c_dists[pos] = d
            c_visited[pos] = 0
            size += 1
        if size > k:
            size = k

    return (
        c_ids[:size].copy(),
        c_dists[:size].copy(),
        hops,
        dcomp,
        visit_ids[:nvisit].copy(),
        visit_dists[:nvisit].copy(),
    )


@njit(nogil=True, cache=True, inline="always")
def _labels_share_with_base(label_indptr, label_flat, a, c, base):
    """True when some label is common to nodes a, c and base (sorted lists)."""
    for ia in range(label_indptr[a], label_indptr[a + 1]):
        la = label_flat[ia]
        found_c = False
        for ic in range(label_indptr[c], label_indptr[c + 1]):
            if label_flat[ic] == la:
                found_c = True
                break
        if not found_c:
            continue
        for ib in range(label_indptr[base], label_indptr[base + 1]):
            if label_flat[ib] == la:
                return True
    return False


@njit(nogil=True, cache=True)
def robust_prune(
    vectors, p, cand_ids, cand_dists, alpha_sq, max_out, label_indptr, label_flat
):
    """Alpha-pruned neighbor selection for node p.

    Candidates are processed in (distance, id) order; keeping candidate a
    discards every remaining c with alpha^2 * d_sq(a, c) <= d_sq(p, c),
    i.e. the Euclidean alpha rule on squared distances. With label data
    (indptr non-empty beyond the trivial case), a may only discard c when
    a, c and p share a label. Returns kept ids in insertion order.
    """
    m = cand_ids.shape[0]
    order = np.argsort(cand_dists, kind="mergesort").astype(np.int64)
    # break distance ties by id (mergesort is stable but input order is not id order)
    i = 0
    while i < m - 1:
        j = i + 1
        while j < m and cand_dists[order[j]] == cand_dists[order[i]]:
            j += 1
        if j - i > 1:
            for a in range(i + 1, j):
                key = order[a]
                b = a - 1
                while b >= i and cand_ids[order[b]] > cand_ids[key]:
                    order[b + 1] = order[b]
                    b -= 1
                order[b + 1] = key
        i = j

    use_labels = label_indptr.shape[0] > 1
    active = np.ones(m, dtype=np.uint8)
    out = np.empty(min(max_out, m), dtype=np.int32)
    nout = 0
    for oi in range(m):
        idx = order[oi]
        if active[idx] == 0:
            continue
        active[idx] = 0
        kept = cand_ids[idx]
        out[nout] = kept
        nout += 1
        if nout == max_out:
            break
        for oj in range(oi + 1, m):
            jdx = order[oj]
            if active[jdx] == 0:
                continue
            c = cand_ids[jdx]
            if use_labels and not _labels_share_with_base(
                label_indptr, label_flat, kept, c, p
            ):
                continue
            if alpha_sq * _dist_sq_rows(vectors, kept, c) <= cand_dists[jdx]:
                active[jdx] = 0
    return out[:nout].copy()


@njit(nogil=True, cache=True)
def _attach_node(
    vectors,
    adj,
    deg,
    p,
    medoid,
    beam_width,
    alpha_sq,
    max_out,
    stamp,
    stamp_val,
    cand_stamp,
    cand_val,
    label_indptr,
    label_flat,
):
    """Wire node p into the graph: search, prune, add reverse edges.

    Reverse edges that would overflow a neighbor's out-list trigger a
    re-prune of that neighbor over its current list plus p.
    """
    sp = np.empty(1, dtype=np.int64)
    sp[0] = medoid
    _, _, _, _, visit_ids, visit_dists = beam_search(
        vectors, adj, deg, vectors[p], beam_width, sp, stamp, stamp_val, NO_FILTER
    )

    ncand = visit_ids.shape[0] + deg[p]
    cand_ids = np.empty(ncand, dtype=np.int64)
    cand_dists = np.empty(ncand, dtype=np.float64)
    m = 0
    cand_stamp[p] = cand_val
    for i in range(visit_ids.shape[0]):
        node = visit_ids[i]
        if cand_stamp[node] == cand_val:
            continue
        cand_stamp[node] = cand_val
        cand_ids[m] = node
        cand_dists[m] = visit_dists[i]
        m += 1
    for j in range(deg[p]):
        node = adj[p, j]
        if cand_stamp[node] == cand_val:
            continue
        cand_stamp[node] = cand_val
        cand_ids[m] = node
        cand_dists[m] = _dist_sq_rows(vectors, node, p)
        m += 1

    kept = robust_prune(
        vectors, p, cand_ids[:m], cand_dists[:m], alpha_sq, max_out,
        label_indptr, label_flat,
    )
    deg[p] = kept.shape[0]
    for j in range(kept.shape[0]):
        adj[p, j] = kept[j]

    rev_ids = np.empty(max_out + 1, dtype=np.int64)
    rev_dists = np.empty(max_out + 1, dtype=np.float64)
    for j in range(kept.shape[0]):
        nb = np.int64(kept[j])
        present = False
        for t in range(deg[nb]):
            if adj[nb, t] == p:
                present = True
                break
        if present:
            continue
        if deg[nb] < max_out:
            adj[nb, deg[nb]] = p
            deg[nb] += 1
        else:
            nm = 0
            for t in range(deg[nb]):
                node = adj[nb, t]
                rev_ids[nm] = node
                rev_dists[nm] = _dist_sq_rows(vectors, node, nb)
                nm += 1
            rev_ids[nm] = p
            rev_dists[nm] = _dist_sq_rows(vectors, p, nb)
            nm += 1
            rkept = robust_prune(
                vectors, nb, rev_ids[:nm], rev_dists[:nm], alpha_sq, max_out,
                label_indptr, label_flat,
            )
            deg[nb] = rkept.shape[0]
            for t in range(rkept.shape[0]):
                adj[nb, t] = rkept[t]


@njit(nogil=True, cache=True)
def build_pass(
    vectors,
    adj,
    deg,
    order,
    medoid,
    beam_width,
    alpha_sq,
    max_out,
    stamp,
    cand_stamp,
    label_indptr,
    label_flat,
):
    """One full construction pass over `order` at the given alpha."""
    stamp_val = 0
    for oi in range(order.shape[0]):
        p = order[oi]
        stamp_val += 2
        _attach_node(
            vectors, adj, deg, p, medoid, beam_width, alpha_sq, max_out,
            stamp, stamp_val, cand_stamp, stamp_val + 1, label_indptr, label_flat,
        )
    return stamp_val
