"""Independent reference computations used to check the package.

Nothing here imports the code paths it checks: finite differences work on
plain numpy callables, the routing transcription is straight-line loops,
transforms are O(N^2) sums.
"""

import itertools
import math

import numpy as np


def central_diff(f, arrays, h=1e-5):
    """Central finite-difference gradient of scalar ``f(*arrays)`` for each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(*arrays)
            flat[i] = orig - h
            down = f(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def brute_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * m * k / n)) for m in range(n)])


def brute_dct2_ortho(x):
    n = len(x)
    out = np.zeros(n)
    for k in range(n):
        s = sum(x[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
        out[k] = s * (math.sqrt(1.0 / n) if k == 0 else math.sqrt(2.0 / n))
    return out


def brute_assignment(cost):
    """Minimum total cost over all permutations (lexicographically first on ties)."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    best, best_perm = None, None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        if best is None or total < best - 1e-12:
            best, best_perm = total, perm
    return list(best_perm), best


def brute_accuracy(predicted, truth):
    """Best one-to-one cluster->class map by enumerating injective maps."""
    preds = sorted(set(predicted))
    classes = sorted(set(truth))
    k = max(len(preds), len(classes))
    targets = classes + [None] * (k - len(classes))
    best = 0
    for perm in itertools.permutations(targets, len(preds)):
        mapping = dict(zip(preds, perm))
        best = max(best, sum(mapping[p] == t for p, t in zip(predicted, truth)))
    return best / len(truth)


def direct_nmi(predicted, truth):
    n = len(predicted)
    pu = {u: predicted.count(u) / n for u in set(predicted)}
    pv = {v: truth.count(v) / n for v in set(truth)}
    mi = 0.0
    for u in pu:
        for v in pv:
            joint = sum(1 for a, b in zip(predicted, truth) if a == u and b == v) / n
            if joint > 0:
                mi += joint * math.log(joint / (pu[u] * pv[v]))
    hu = -sum(p * math.log(p) for p in pu.values())
    hv = -sum(p * math.log(p) for p in pv.values())
    return 2 * mi / (hu + hv)


def routing_transcription(u_hat, iterations):
    """Line-by-line routing by agreement for one item.

    u_hat[k][l] is the prediction of input capsule k for output capsule l.
    """
    u_hat = np.asarray(u_hat, dtype=np.float64)
    k_in, k_out, dim = u_hat.shape
    b = [[0.0] * k_out for _ in range(k_in)]
    v = None
    for _ in range(iterations):
        c = []
        for k in range(k_in):
            m = max(b[k])
            e = [math.exp(b[k][l] - m) for l in range(k_out)]
            tot = sum(e)
            c.append([x / tot for x in e])
        s = [[sum(c[k][l] * u_hat[k, l, d] for k in range(k_in)) for d in range(dim)] for l in range(k_out)]
        v = []
        for l in range(k_out):
            sq = sum(x * x for x in s[l])
            length = math.sqrt(sq)
            factor = sq / (1.0 + sq) / length if length > 0 else 0.0
            v.append([factor * x for x in s[l]])
        for k in range(k_in):
            for l in range(k_out):
                b[k][l] += sum(u_hat[k, l, d] * v[l][d] for d in range(dim))
    return np.array(v), np.array(c)


def naive_conv2d(x, w, stride, pad):
    """Direct-summation cross-correlation."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, f, oh, ow))
    for b in range(n):
        for o in range(f):
            for i in range(oh):
                for j in range(ow):
                    out[b, o, i, j] = np.sum(xp[b, :, i * sh:i * sh + kh, j * sw:j * sw + kw] * w[o])
    return out
