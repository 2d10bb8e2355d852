"""Shared oracles for the test-suite: nested-loop layers and finite differences."""

import contextlib

import numpy as np

import usta.nn as nn


def conv_loop(x, k, b, p):
    n, c, h, w = x.shape
    oc, _, kh, kw = k.shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p))
    xp[:, :, p:p + h, p:p + w] = x
    ho, wo = h + 2 * p - kh + 1, w + 2 * p - kw + 1
    out = np.zeros((n, oc, ho, wo))
    for s in range(n):
        for o in range(oc):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[s, ci, i + u, j + v] * k[o, ci, u, v]
                    out[s, o, i, j] = acc
    return out


def pool_loop(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for s in range(n):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[s, ch, i, j] = max(x[s, ch, 2 * i + u, 2 * j + v] for u in (0, 1) for v in (0, 1))
    return out


def tconv_loop(x, k, b):
    n, c, h, w = x.shape
    oc = k.shape[1]
    out = np.zeros((n, oc, 2 * h, 2 * w))
    for s in range(n):
        for o in range(oc):
            for i in range(h):
                for j in range(w):
                    for u in (0, 1):
                        for v in (0, 1):
                            out[s, o, 2 * i + u, 2 * j + v] += sum(x[s, ci, i, j] * k[ci, o, u, v] for ci in range(c))
            if b is not None:
                out[s, o] += b[o]
    return out


@contextlib.contextmanager
def kink_recorder():
    """Record every ReLU mask and max-pool argmax produced inside the block.

    Finite differences are meaningless when a perturbation flips one of
    these, so gradient checks compare the records and skip such points.
    """
    log = []
    relu, pool = nn.relu, nn.maxpool2

    def relu_rec(x):
        log.append(x.data > 0)
        return relu(x)

    def pool_rec(x):
        n, c, h, w = x.shape
        blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        log.append(blocks.argmax(axis=-1))
        return pool(x)

    nn.relu, nn.maxpool2 = relu_rec, pool_rec
    try:
        yield log
    finally:
        nn.relu, nn.maxpool2 = relu, pool


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def gradcheck(loss_fn, tensors, rng, probes=4, h=1e-5, floor=1e-8):
    """Worst relative error between autodiff and central differences.

    ``loss_fn`` builds a fresh scalar Tensor from the current tensor values.
    Probes whose +h / -h evaluations cross a ReLU or pooling kink are
    redrawn (up to a bounded number of attempts).
    """
    for t in tensors:
        t.grad = None
    with kink_recorder() as base:
        loss = loss_fn()
    nn.backward(loss)
    grads = [t.grad.copy() for t in tensors]
    worst, checked = 0.0, 0
    for t, g in zip(tensors, grads):
        done = 0
        for _ in range(20 * probes):
            if done == probes:
                break
            i = tuple(int(rng.integers(0, s)) for s in t.shape)
            old = t.data[i]
            t.data[i] = old + h
            with kink_recorder() as up:
                lp = float(loss_fn().data)
            t.data[i] = old - h
            with kink_recorder() as down:
                lm = float(loss_fn().data)
            t.data[i] = old
            if not (_same(base, up) and _same(base, down)):
                continue
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), floor))
            done += 1
        checked += done
    return worst, checked
