"""Plain-loop reference for the confidence-aware dense loss, written independently of the vectorised one."""

import math


def dense_loss_reference(pred, gt, mask, conf, alpha, grad_term=True):
    """pred/gt nested as [C][H][W]; mask/conf as [H][W]."""
    channels, h, w = len(pred), len(pred[0]), len(pred[0][0])
    total = 0.0
    for i in range(h):
        for j in range(w):
            if mask[i][j] < 0.5:
                continue
            s = conf[i][j]
            for c in range(channels):
                total += abs(s * (pred[c][i][j] - gt[c][i][j]))
                if grad_term:
                    if j + 1 < w and mask[i][j + 1] >= 0.5:
                        dp = pred[c][i][j + 1] - pred[c][i][j]
                        dg = gt[c][i][j + 1] - gt[c][i][j]
                        total += abs(s * (dp - dg))
                    if i + 1 < h and mask[i + 1][j] >= 0.5:
                        dp = pred[c][i + 1][j] - pred[c][i][j]
                        dg = gt[c][i + 1][j] - gt[c][i][j]
                        total += abs(s * (dp - dg))
            total -= alpha * math.log(s)
    return total


def pixel_residual(pred, gt, mask, i, j):
    """Sum of the absolute residuals that the confidence at (i, j) multiplies."""
    channels, h, w = len(pred), len(pred[0]), len(pred[0][0])
    r = 0.0
    for c in range(channels):
        r += abs(pred[c][i][j] - gt[c][i][j])
        if j + 1 < w and mask[i][j + 1] >= 0.5:
            r += abs((pred[c][i][j + 1] - pred[c][i][j]) - (gt[c][i][j + 1] - gt[c][i][j]))
        if i + 1 < h and mask[i + 1][j] >= 0.5:
            r += abs((pred[c][i + 1][j] - pred[c][i][j]) - (gt[c][i + 1][j] - gt[c][i][j]))
    return r


def golden_section(f, lo, hi, iters=200):
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (a + b) / 2
