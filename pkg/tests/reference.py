"""Per-scalar loop reference of the DEKT cell.

Plain Python floats and nested lists only: no graph, no vectorized math.
Used as the independent oracle for the batched implementation.
"""

import math

EMO = ("emb_concentration", "emb_boredom", "emb_confusion", "emb_frustration")


def sig(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def softmax(xs):
    m = max(xs)
    ex = [math.exp(x - m) for x in xs]
    s = sum(ex)
    return [v / s for v in ex]


def affine(x, W, b):
    out = []
    for j in range(len(b)):
        acc = float(b[j])
        for i in range(len(x)):
            acc += float(x[i]) * float(W[i][j])
        out.append(acc)
    return out


def row(table, idx):
    idx = int(idx)
    if idx == 0:
        return [0.0] * len(table[0])
    return [float(v) for v in table[idx]]


def discretize(v, bins):
    return min(int(math.floor(v * bins)), bins - 1)


def reference_unroll(P, batch, qmatrix, variant="full", self_loop_g0=None, bins=None):
    """Returns (y, g, states): y[b][t], g[b][t][k] for predictions t = 0..L-2."""
    B, L = batch.exercise.shape
    M = len(qmatrix[0])
    d = len(P["emb_exercise"][0])
    ys, gs, states = [], [], []
    for b in range(B):
        h = [[0.0] * d for _ in range(M)]
        f = [0.5] * d
        prev_g = None if self_loop_g0 is None else [float(v) for v in self_loop_g0[b]]
        yb, gb, sb = [], [], []
        for t in range(L):
            ex = int(batch.exercise[b, t])
            e = row(P["emb_exercise"], ex)
            at = row(P["emb_answer_time"], batch.answer_time[b, t])
            it = row(P["emb_interval_time"], batch.interval_time[b, t])
            a = row(P["emb_answer"], batch.answer[b, t])
            if prev_g is not None:
                vals = prev_g
                idxs = [discretize(v, bins) + 1 for v in vals]
            else:
                vals = [float(v) for v in batch.emotion_values[b, t]]
                idxs = [int(i) for i in batch.emotion_bins[b, t]]
            if variant == "no-embedding":
                cm = list(vals)
            else:
                cat = []
                for k in range(4):
                    cat += row(P[EMO[k]], idxs[k])
                cm = affine(cat, P["W1"], P["b1"])

            # knowledge
            l = affine(e + at + a, P["W2"], P["b2"])
            q = [float(v) for v in qmatrix[ex]]
            hrel = [sum(q[m] * h[m][j] for m in range(M)) for j in range(d)]
            lg = [math.tanh(v) for v in affine(l + hrel, P["W3"], P["b3"])]
            if variant == "no-gain":
                gate = [sig(v) for v in affine(l + hrel, P["W4"], P["b4"])]
            else:
                gate = [sig(v) for v in affine(cm + l + hrel, P["W5"], P["b5"])]
            dh = [gate[j] * ((lg[j] + 1.0) / 2.0) for j in range(d)]
            dht = [[q[m] * dh[j] for j in range(d)] for m in range(M)]
            hnew = []
            for m in range(M):
                fg = [sig(v) for v in affine(h[m] + dh + it, P["W6"], P["b6"])]
                hnew.append([dht[m][j] + fg[j] * h[m][j] for j in range(d)])

            # emotion
            cmpad = cm + [0.0] * (d - len(cm))
            s1 = sum(cmpad[j] * at[j] for j in range(d)) + float(P["beta"][0])
            s2 = sum(cmpad[j] * a[j] for j in range(d)) + float(P["beta"][1])
            al = softmax([s1, s2])
            es = [al[0] * at[j] + al[1] * a[j] for j in range(d)]
            fp = [sig(v) for v in affine(e + cm + es, P["W7"], P["b7"])]
            aec = [math.tanh(v) for v in affine(fp + f, P["W8"], P["b8"])]
            gam = [sig(v) for v in affine(fp + f, P["W9"], P["b9"])]
            df = [aec[j] * gam[j] for j in range(d)]
            if variant == "no-interaction":
                x = df
            else:
                dhrel = [sum(q[m] * dht[m][j] for m in range(M)) for j in range(d)]
                x = [df[j] * dhrel[j] for j in range(d)]
            w = softmax(affine(x, P["W10"], P["b10"]))
            fnew = [w[j] * df[j] + (1.0 - w[j]) * f[j] for j in range(d)]

            if batch.mask[b, t] > 0:
                h, f = hnew, fnew
            sb.append(([r[:] for r in h], f[:]))

            if t + 1 < L:
                nx = int(batch.exercise[b, t + 1])
                en = row(P["emb_exercise"], nx)
                qn = [float(v) for v in qmatrix[nx]]
                cmp_ = [sig(v) for v in affine(f + en, P["W11"], P["b11"])]
                g = [sig(v) for v in affine(cmp_, P["W13"], P["b13"])]
                hn = [sum(qn[m] * h[m][j] for m in range(M)) for j in range(d)]
                em = en if variant == "no-exercise" else [cmp_[j] * en[j] for j in range(d)]
                hm = hn if variant == "no-expression" else [cmp_[j] * hn[j] for j in range(d)]
                y = sig(affine(em + hm, P["W12"], P["b12"])[0])
                yb.append(y)
                gb.append(g)
                if prev_g is not None:
                    prev_g = g
        ys.append(yb)
        gs.append(gb)
        states.append(sb)
    return ys, gs, states
