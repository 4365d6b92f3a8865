"""Compiled inner loops for one trajectory at a time.

Built-in models name a field kernel from :data:`FIELD_KERNELS`.  A field
kernel ``(q, params, v, g)`` writes ``v[c, k]`` (``c`` = 0, 1, 2 for V00, V11,
V01 at bead ``k``) and the gradients ``g[c, k, :]``.  Drivers select the kernel
by integer id rather than taking a function argument, which keeps them in the
on-disk compilation cache.

Status codes returned by the drivers: 0 ok, 1 non-finite state or force,
2 non-positive coupling, 3 hop probability above one.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK, NONFINITE, BAD_COUPLING, HOP_OVERFLOW = 0, 1, 2, 3
_LOG2 = math.log(2.0)


# --- field kernels ------------------------------------------------------------

@njit(cache=True)
def _benchmark_fields(q, params, v, g):
    for k in range(q.shape[0]):
        x = q[k, 0]
        e1 = math.exp(-(x - 1.0) ** 2)
        e2 = math.exp(-(x - 1.5) ** 2)
        c = math.exp(-x * x)
        sn = math.sin(x)
        cs = math.cos(x)
        v[0, k] = x * x + 2.0 * (1.0 - cs) - 3.0 * e1 - 2.0 * e2 + 3.0
        v[1, k] = x * x + 4.0 * (1.0 - cs) - 2.0 * e1 + 3.0
        v[2, k] = c
        g[0, k, 0] = 2.0 * x + 2.0 * sn + 6.0 * (x - 1.0) * e1 + 4.0 * (x - 1.5) * e2
        g[1, k, 0] = 2.0 * x + 4.0 * sn + 4.0 * (x - 1.0) * e1
        g[2, k, 0] = -2.0 * x * c


@njit(cache=True)
def _constant_fields(q, params, v, g):
    for k in range(q.shape[0]):
        for c in range(3):
            v[c, k] = params[c]
            for a in range(q.shape[1]):
                g[c, k, a] = 0.0


@njit(cache=True)
def _harmonic_fields(q, params, v, g):
    m, w0, w1, shift = params[0], params[1], params[2], params[3]
    offset, coupling, width = params[4], params[5], params[6]
    for k in range(q.shape[0]):
        x = q[k, 0]
        v[0, k] = 0.5 * m * w0 * w0 * x * x
        v[1, k] = 0.5 * m * w1 * w1 * (x - shift) ** 2 + offset
        g[0, k, 0] = m * w0 * w0 * x
        g[1, k, 0] = m * w1 * w1 * (x - shift)
        if width > 0.0:
            e = coupling * math.exp(-x * x / (width * width))
            v[2, k] = e
            g[2, k, 0] = -2.0 * x / (width * width) * e
        else:
            v[2, k] = coupling
            g[2, k, 0] = 0.0


FIELD_KERNELS = {"benchmark-1d": 0, "constant": 1, "harmonic": 2}


@njit(cache=True)
def fields(kid, q, params, v, g):
    if kid == 0:
        _benchmark_fields(q, params, v, g)
    elif kid == 1:
        _constant_fields(q, params, v, g)
    else:
        _harmonic_fields(q, params, v, g)


@njit(cache=True)
def _log_cosh(x):
    x = abs(x)
    if x < 1.0:
        # cosh x - 1 = 2 sinh^2(x/2) keeps full relative precision near 0
        return math.log1p(2.0 * math.sinh(0.5 * x) ** 2)
    return x + math.log1p(math.exp(-2.0 * x)) - _LOG2


@njit(cache=True)
def _log_sinh(x):
    return x + math.log(-math.expm1(-2.0 * x)) - _LOG2


@njit(cache=True)
def _check_fields(v):
    n = v.shape[1]
    for k in range(n):
        for c in range(3):
            if not math.isfinite(v[c, k]):
                return NONFINITE
        if not v[2, k] > 0.0:
            return BAD_COUPLING
    return OK


@njit(cache=True)
def _reference_force(q, params, kid, v, g, f, mass, beta_n):
    n, d = q.shape
    fields(kid, q, params, v, g)
    ks = mass / (beta_n * beta_n)
    for k in range(n):
        t = math.tanh(beta_n * v[2, k])
        km = k - 1 if k > 0 else n - 1
        kp = k + 1 if k < n - 1 else 0
        for a in range(d):
            f[k, a] = (-ks * (2.0 * q[k, a] - q[km, a] - q[kp, a])
                       - g[0, k, a] + t * g[2, k, a])
    return _check_fields(v)


@njit(cache=True)
def _extended_force(q, ell, params, kid, v, g, f, mass, beta_n):
    n, d = q.shape
    fields(kid, q, params, v, g)
    ks = mass / (beta_n * beta_n)
    for k in range(n):
        x = beta_n * v[2, k]
        a0 = ell[k]
        b0 = ell[k + 1] if k < n - 1 else ell[0]
        km = k - 1 if k > 0 else n - 1
        kp = k + 1 if k < n - 1 else 0
        for a in range(d):
            if a0 == b0:
                dpot = g[a0, k, a] - math.tanh(x) * g[2, k, a]
            else:
                dpot = 0.5 * (g[0, k, a] + g[1, k, a]) - g[2, k, a] / math.tanh(x)
            f[k, a] = -ks * (2.0 * q[k, a] - q[km, a] - q[kp, a]) - dpot
    return _check_fields(v)


@njit(cache=True)
def _finite_state(q, p, f):
    n, d = q.shape
    for k in range(n):
        for a in range(d):
            if not (math.isfinite(q[k, a]) and math.isfinite(p[k, a]) and math.isfinite(f[k, a])):
                return False
    return True


@njit(cache=True)
def reference_init(q, params, kid, f, mass, beta_n):
    n, d = q.shape
    v = np.empty((3, n))
    g = np.empty((3, n, d))
    return _reference_force(q, params, kid, v, g, f, mass, beta_n)


@njit(cache=True)
def reference_chunk(q, p, f, xi, params, kid, c1, c2, dt, mass, beta_n, rec_q, rec_v):
    """Advance ``xi.shape[0]`` BAOAB steps in place.

    When ``rec_v`` has as many rows as ``xi`` the positions and potential
    values after every step are stored; pass zero-row arrays to skip recording.
    """
    n, d = q.shape
    steps = xi.shape[0]
    record = rec_v.shape[0] == steps
    v = np.empty((3, n))
    g = np.empty((3, n, d))
    h = 0.5 * dt
    hm = h / mass
    for t in range(steps):
        for k in range(n):
            for a in range(d):
                p[k, a] += h * f[k, a]
                q[k, a] += hm * p[k, a]
                p[k, a] = c1 * p[k, a] + c2 * xi[t, k, a]
                q[k, a] += hm * p[k, a]
        status = _reference_force(q, params, kid, v, g, f, mass, beta_n)
        if status != OK:
            return status
        for k in range(n):
            for a in range(d):
                p[k, a] += h * f[k, a]
        if record:
            rec_q[t] = q
            rec_v[t] = v
    if not _finite_state(q, p, f):
        return NONFINITE
    return OK


@njit(cache=True)
def _bond_actions(v, beta_n, u):
    n = v.shape[1]
    for k in range(n):
        x = beta_n * v[2, k]
        lc = _log_cosh(x)
        ls = _log_sinh(x)
        u[k, 0, 0] = beta_n * v[0, k] - lc
        u[k, 1, 1] = beta_n * v[1, k] - lc
        u[k, 0, 1] = 0.5 * beta_n * (v[0, k] + v[1, k]) - ls
        u[k, 1, 0] = u[k, 0, 1]


@njit(cache=True)
def hop_log_rates(v, ell, beta_n, out):
    """Log rates of the N single flips (``out[:N]``) and the global flip (``out[N]``)."""
    n = ell.shape[0]
    u = np.empty((n, 2, 2))
    _bond_actions(v, beta_n, u)
    s_old = 0.0
    s_new = 0.0
    for j in range(n):
        a = ell[j]
        prev = ell[j - 1] if j > 0 else ell[n - 1]
        nxt = ell[j + 1] if j < n - 1 else ell[0]
        jm = j - 1 if j > 0 else n - 1
        old = u[jm, prev, a] + u[j, a, nxt]
        new = u[jm, prev, 1 - a] + u[j, 1 - a, nxt]
        out[j] = 0.5 * (old - new)
        s_old += u[j, a, nxt]
        s_new += u[j, 1 - a, 1 - nxt]
    out[n] = 0.5 * (s_old - s_new)


@njit(cache=True)
def pimdsh_init(q, ell, params, kid, f, mass, beta_n):
    n, d = q.shape
    v = np.empty((3, n))
    g = np.empty((3, n, d))
    return _extended_force(q, ell, params, kid, v, g, f, mass, beta_n)


@njit(cache=True)
def _flip(ell, j):
    n = ell.shape[0]
    if j == n:
        for k in range(n):
            ell[k] = 1 - ell[k]
    else:
        ell[j] = 1 - ell[j]


@njit(cache=True)
def _total_rate(v, ell, beta_n, lr):
    hop_log_rates(v, ell, beta_n, lr)
    total = 0.0
    for j in range(lr.shape[0]):
        total += math.exp(lr[j])
    return total


@njit(cache=True)
def pimdsh_chunk(q, p, ell, f, xi, uni, params, kid, c1, c2, dt, mass, beta_n, eta,
                 capped, rec_q, rec_v, rec_ell):
    """BAOAB on the live sequence plus one Bernoulli hop attempt per step.

    Hop probabilities are ``eta * dt * p``.  Without ``capped`` their sum must
    stay at or below one.  With ``capped`` the move to ``l'`` has probability
    ``eta * dt * p * min(1, 1 / (eta * dt * S(l)), 1 / (eta * dt * S(l')))``,
    ``S`` being the total rate; the factor is symmetric in ``(l, l')`` so
    detailed balance is exact.  It is drawn as a proposal scaled by the first
    cap and accepted with the ratio of caps, reusing the same uniform.
    """
    n, d = q.shape
    steps = xi.shape[0]
    record = rec_v.shape[0] == steps
    v = np.empty((3, n))
    g = np.empty((3, n, d))
    lr = np.empty(n + 1)
    lr2 = np.empty(n + 1)
    h = 0.5 * dt
    hm = h / mass
    scale = eta * dt
    for t in range(steps):
        for k in range(n):
            for a in range(d):
                p[k, a] += h * f[k, a]
                q[k, a] += hm * p[k, a]
                p[k, a] = c1 * p[k, a] + c2 * xi[t, k, a]
                q[k, a] += hm * p[k, a]
        status = _extended_force(q, ell, params, kid, v, g, f, mass, beta_n)
        if status != OK:
            return status
        for k in range(n):
            for a in range(d):
                p[k, a] += h * f[k, a]
        if eta > 0.0:
            hop_log_rates(v, ell, beta_n, lr)
            total = 0.0
            for j in range(n + 1):
                lr[j] = scale * math.exp(lr[j])
                total += lr[j]
            cap = 1.0
            if total > 1.0:
                if not capped:
                    return HOP_OVERFLOW
                cap = 1.0 / total
            x = uni[t]
            if x < total * cap:
                acc = 0.0
                choice = n
                for j in range(n + 1):
                    if acc + lr[j] * cap > x:
                        choice = j
                        break
                    acc += lr[j] * cap
                _flip(ell, choice)
                keep = True
                if capped:
                    cap2 = min(1.0, 1.0 / (scale * _total_rate(v, ell, beta_n, lr2)))
                    if cap2 < cap and x - acc >= lr[choice] * cap2:
                        _flip(ell, choice)
                        keep = False
                if keep:
                    _extended_force(q, ell, params, kid, v, g, f, mass, beta_n)
        if record:
            rec_q[t] = q
            rec_v[t] = v
            rec_ell[t] = ell
    if not _finite_state(q, p, f):
        return NONFINITE
    return OK


@njit(cache=True)
def level_sums_from_values(v, a, beta_n, kmax, want_a, out_a, out_b):
    """Transfer-product evaluation of ``A_k`` and ``B_k`` for ``k <= kmax``.

    ``v`` is ``(S, 3, N)`` potential values, ``a`` is ``(S, 3, N)`` observable
    entries ``(A00, A11, A01)``.  Results go to ``out_a`` / ``out_b`` of shape
    ``(S, kmax + 1)``.  Same recursion as ``polymer.level_sums``.
    """
    ns, _, n = v.shape
    deg = kmax + 1
    e00 = np.empty(deg)
    e11 = np.empty(deg)
    o01 = np.empty(deg)
    o10 = np.empty(deg)
    y00 = np.empty(deg)
    y11 = np.empty(deg)
    y01 = np.empty(deg)
    y10 = np.empty(deg)
    for s_i in range(ns):
        e00[:] = 0.0
        e11[:] = 0.0
        o01[:] = 0.0
        o10[:] = 0.0
        y00[:] = 0.0
        y11[:] = 0.0
        y01[:] = 0.0
        y10[:] = 0.0
        e00[0] = 1.0
        e11[0] = 1.0
        for j in range(n):
            dv = v[s_i, 1, j] - v[s_i, 0, j]
            s = math.exp(-beta_n * dv)
            r = math.tanh(beta_n * v[s_i, 2, j]) * math.exp(-0.5 * beta_n * dv)
            if want_a:
                a00 = a[s_i, 0, j]
                a11 = a[s_i, 1, j]
                a01 = a[s_i, 2, j]
                d00 = a00 - a01 * r
                d11 = a11 * s - a01 * r
                d01 = a00 * r - a01 * s
                d10 = a11 * r - a01
                # descending degree so index i - 1 still holds the old value
                for i in range(deg - 1, -1, -1):
                    sy01 = y01[i - 1] if i > 0 else 0.0
                    sy10 = y10[i - 1] if i > 0 else 0.0
                    so01 = o01[i - 1] if i > 0 else 0.0
                    so10 = o10[i - 1] if i > 0 else 0.0
                    ny00 = y00[i] + r * sy01 + e00[i] * d00 + so01 * d10
                    ny01 = r * y00[i] + s * y01[i] + e00[i] * d01 + o01[i] * d11
                    ny10 = y10[i] + r * y11[i] + o10[i] * d00 + e11[i] * d10
                    ny11 = r * sy10 + s * y11[i] + so10 * d01 + e11[i] * d11
                    y00[i] = ny00
                    y01[i] = ny01
                    y10[i] = ny10
                    y11[i] = ny11
            for i in range(deg - 1, -1, -1):
                so01 = o01[i - 1] if i > 0 else 0.0
                so10 = o10[i - 1] if i > 0 else 0.0
                ne00 = e00[i] + r * so01
                no01 = r * e00[i] + s * o01[i]
                no10 = o10[i] + r * e11[i]
                ne11 = r * so10 + s * e11[i]
                e00[i] = ne00
                o01[i] = no01
                o10[i] = no10
                e11[i] = ne11
        for i in range(deg):
            out_b[s_i, i] = e00[i] + e11[i]
            if want_a:
                out_a[s_i, i] = (y00[i] + y11[i]) / n


@njit(cache=True)
def w_values(v, a, ell, beta_n, out):
    """``W_N[A]`` per recorded step from potentials ``v`` and observable ``a``
    (both ``(S, 3, N)``) and surface sequences ``ell`` (``(S, N)``)."""
    ns, _, n = v.shape
    for t in range(ns):
        w = 0.0
        for k in range(n):
            lk = ell[t, k]
            lb = ell[t, k + 1] if k < n - 1 else ell[t, 0]
            mean = 0.5 * (v[t, 0, k] + v[t, 1, k])
            lt = math.log(math.tanh(beta_n * v[t, 2, k]))
            if lk == lb:
                expo = beta_n * (v[t, lk, k] - mean) + lt
            else:
                expo = beta_n * (mean - v[t, lb, k]) - lt
            w += a[t, lk, k] - math.exp(expo) * a[t, 2, k]
        out[t] = w / n
