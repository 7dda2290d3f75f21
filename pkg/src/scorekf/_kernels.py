"""Compiled inner loops for the filter recursions.

Everything here works on plain float64 arrays so that the Python layer can
keep the public API in terms of dataclasses. Noise families are passed as an
integer code plus a packed parameter vector (see ``NoiseModel.kernel_params``).
"""

import math

import numpy as np
from numba import njit

GAUSSIAN = 0
LOGISTIC = 1
STUDENT_T = 2
MIXTURE = 3


@njit(cache=True, nogil=True)
def score_scalar(code, params, x):
    if code == GAUSSIAN:
        return x
    if code == LOGISTIC:
        s = params[0]
        return math.tanh(0.5 * x / s) / s
    if code == STUDENT_T:
        nu = params[0]
        a = params[1]
        return (nu + 1.0) * x / (a + x * x)
    # mixture: params = [k, w_1..w_k, mu_1..mu_k, sigma_1..sigma_k]
    k = int(params[0])
    best = -np.inf
    for i in range(k):
        z = (x - params[1 + k + i]) / params[1 + 2 * k + i]
        lp = math.log(params[1 + i]) - math.log(params[1 + 2 * k + i]) - 0.5 * z * z
        if lp > best:
            best = lp
    num = 0.0
    den = 0.0
    for i in range(k):
        sig = params[1 + 2 * k + i]
        z = (x - params[1 + k + i]) / sig
        r = math.exp(math.log(params[1 + i]) - math.log(sig) - 0.5 * z * z - best)
        num += r * z / sig
        den += r
    return num / den


@njit(cache=True, nogil=True)
def score_array(code, params, x):
    out = np.empty(x.size)
    for i in range(x.size):
        out[i] = score_scalar(code, params, x[i])
    return out


@njit(cache=True, nogil=True)
def riccati(P0, gamma, Q, R, info, horizon):
    """P_t for t = 1..horizon under the score-filter Riccati map."""
    P = np.empty(horizon)
    prev = P0
    for t in range(horizon):
        m = gamma * gamma * prev + Q
        prev = R * m / (info * info * m + R)
        P[t] = prev
    return P


@njit(cache=True, nogil=True)
def affine_scan(decay, drive, x0):
    """x_t = decay_t * x_{t-1} + drive_t, returned for t = 1..T."""
    out = np.empty(drive.size)
    x = x0
    for t in range(drive.size):
        x = decay[t] * x + drive[t]
        out[t] = x
    return out


@njit(cache=True, nogil=True)
def centered_scan(y, gamma, K, s, code, params, x0):
    out = np.empty(y.size)
    x = x0
    for t in range(y.size):
        pred = gamma * x
        x = pred + K[t] * s * score_scalar(code, params, (y[t] - pred) / s)
        out[t] = x
    return out


@njit(cache=True, nogil=True)
def systematic_indices(weights, u0):
    """Systematic resampling indices for normalized ``weights`` and offset u0 in [0, 1)."""
    n = weights.size
    idx = np.empty(n, dtype=np.int64)
    cum = weights[0]
    j = 0
    for i in range(n):
        u = (u0 + i) / n
        while u > cum and j < n - 1:
            j += 1
            cum += weights[j]
        idx[i] = j
    return idx


@njit(cache=True, nogil=True)
def log_lik(code, params, z):
    """Log density of the standardized noise at z, up to an additive constant."""
    if code == GAUSSIAN:
        return -0.5 * z * z
    if code == LOGISTIC:
        u = abs(z) / params[0]
        return -u - 2.0 * math.log1p(math.exp(-u))
    if code == STUDENT_T:
        return -0.5 * (params[0] + 1.0) * math.log1p(z * z / params[1])
    k = int(params[0])
    best = -np.inf
    for i in range(k):
        sig = params[1 + 2 * k + i]
        c = (z - params[1 + k + i]) / sig
        lp = math.log(params[1 + i]) - math.log(sig) - 0.5 * c * c
        if lp > best:
            best = lp
    acc = 0.0
    for i in range(k):
        sig = params[1 + 2 * k + i]
        c = (z - params[1 + k + i]) / sig
        acc += math.exp(math.log(params[1 + i]) - math.log(sig) - 0.5 * c * c - best)
    return best + math.log(acc)


@njit(cache=True, nogil=True)
def pf_scan(y, noise, uniforms, particles, logw, gamma, g, s, code, params, threshold, est, ess):
    """Bootstrap filter over one chunk; ``particles`` and ``logw`` are updated in place.

    Returns the index of the step where the weights collapsed, or -1.
    """
    P = particles.size
    w = np.empty(P)
    for t in range(y.size):
        top = -np.inf
        for j in range(P):
            particles[j] = gamma * particles[j] + g * noise[t, j]
            logw[j] += log_lik(code, params, (y[t] - particles[j]) / s)
            if logw[j] > top:
                top = logw[j]
        if not np.isfinite(top):
            return t
        total = 0.0
        for j in range(P):
            w[j] = math.exp(logw[j] - top)
            total += w[j]
        m = 0.0
        sq = 0.0
        for j in range(P):
            w[j] /= total
            m += w[j] * particles[j]
            sq += w[j] * w[j]
        est[t] = m
        ess[t] = 1.0 / sq
        if ess[t] < threshold * P:
            idx = systematic_indices(w, uniforms[t])
            moved = particles[idx]
            for j in range(P):
                particles[j] = moved[j]
                logw[j] = 0.0
        else:
            for j in range(P):
                logw[j] = math.log(w[j]) if w[j] > 0.0 else -np.inf
    return -1


@njit(cache=True, nogil=True)
def _barJ_run(eIVe, sw_inv, g2t, J0, tol, max_iter, out):
    """One pass of the batched information recursion; fills ``out`` if it is large enough."""
    J = J0
    if out.size:
        out[0] = J0
    prev_step = 0.0
    n = 0
    for _ in range(max_iter):
        nxt = eIVe + J * sw_inv / (J + g2t * sw_inv)
        n += 1
        if n < out.size:
            out[n] = nxt
        step = abs(nxt - J)
        if step == 0.0:
            break
        if prev_step > 0.0:
            rho = min(step / prev_step, 1.0 - 1e-16)
            if step * rho / (1.0 - rho) <= tol * nxt:
                break
        prev_step = step
        J = nxt
    return n


@njit(cache=True, nogil=True)
def barJ_trace(eIVe, sw_inv, g2t, J0, tol, max_iter):
    n = _barJ_run(eIVe, sw_inv, g2t, J0, tol, max_iter, np.empty(0))
    out = np.empty(n + 1)
    _barJ_run(eIVe, sw_inv, g2t, J0, tol, max_iter, out)
    return out
