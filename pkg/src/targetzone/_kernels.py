"""Compiled inner loops for path simulation.

The control evaluation mirrors :meth:`PolicyFn.control_at` formula for
formula; agreement is checked in the tests.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

KIND_CODES = {"quadratic": 0, "sine": 1}


@njit(cache=True, nogil=True)
def horner(c, x):
    acc = c[c.shape[0] - 1]
    for k in range(c.shape[0] - 2, -1, -1):
        acc = acc * x + c[k]
    return acc


@njit(cache=True, nogil=True)
def control(x, nodes, U, dU, kind, gamma, eta):
    n = nodes.shape[0]
    lo = nodes[0]
    hi = nodes[n - 1]
    h = (hi - lo) / (n - 1)
    i = int((x - lo) / h)
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    while i > 0 and x < nodes[i]:
        i -= 1
    while i < n - 2 and x >= nodes[i + 1]:
        i += 1
    t = (x - nodes[i]) / h
    t2 = t * t
    t3 = t2 * t
    y0 = U[i]
    y1 = U[i + 1]
    m0 = dU[i]
    m1 = dU[i + 1]
    u_val = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * m0 + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * m1
    u_der = ((6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * h * m0 + (6 * t - 6 * t2) * y1
             + (3 * t2 - 2 * t) * h * m1) / h
    width = hi - lo
    if kind == 0:
        d = (x - lo) * (hi - x) / width
        d1 = (lo + hi - 2.0 * x) / width
    else:
        arg = math.pi * (x - lo) / width
        d = width / math.pi * math.sin(arg)
        d1 = math.cos(arg)
    v1 = -u_der * math.log(d) - u_val * d1 / d
    return -(gamma * v1 + 1.0) / (2.0 * eta)


@njit(cache=True, nogil=True)
def simulate(x0, dB, dt, lo, hi, margin, enforce_band, drift, sigma, gamma, eta, lam,
             force, force_value, nodes, U, dU, kind, stride,
             out_t, out_x, out_u, out_inv, out_cost):
    """Euler-Maruyama loop with left-endpoint quadrature.

    Returns ``(rows, clamp_events, exited, min_x, max_x, steps_taken)``.
    """
    n_steps = dB.shape[0]
    band_lo = lo + margin
    band_hi = hi - margin
    x = x0
    inv = 0.0
    cost = 0.0
    clamps = 0
    exited = False
    min_x = x0
    max_x = x0
    rows = 0
    k = 0
    while k < n_steps:
        t = k * dt
        if force:
            u = force_value
        else:
            u = control(x, nodes, U, dU, kind, gamma, eta)
        if k % stride == 0:
            out_t[rows] = t
            out_x[rows] = x
            out_u[rows] = u
            out_inv[rows] = inv
            out_cost[rows] = cost
            rows += 1
        inv += u * dt
        cost += math.exp(-lam * t) * (u + eta * u * u) * dt
        xp = x + (horner(drift, x) + gamma * u) * dt + sigma * dB[k]
        k += 1
        if enforce_band and not (band_lo < xp < band_hi):
            if margin == 0.0:
                x = lo if xp <= lo else hi
                exited = True
            else:
                x = band_lo if xp <= band_lo else band_hi
                clamps += 1
        else:
            x = xp
        if x < min_x:
            min_x = x
        if x > max_x:
            max_x = x
        if exited:
            break
    # closing row at the last state reached
    t = k * dt
    if force:
        u = force_value
    elif exited:
        u = math.nan
    else:
        u = control(x, nodes, U, dU, kind, gamma, eta)
    out_t[rows] = t
    out_x[rows] = x
    out_u[rows] = u
    out_inv[rows] = inv
    out_cost[rows] = cost
    rows += 1
    return rows, clamps, exited, min_x, max_x, k


def empty_policy_arrays():
    z = np.array([0.0, 0.5, 1.0])
    return z, np.zeros(3), np.zeros(3)
