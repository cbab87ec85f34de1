# Compiled inner loops for the Hawkes time layers.
# History of event k is every event with a smaller index, so tied
# timestamps excite each other through a zero lag.
import numpy as np
from numba import njit


@njit(cache=True)
def exp_loglik_grad(t, T, mu, eta, beta):
    n = t.shape[0]
    ll = 0.0
    g_mu = 0.0
    g_eta = 0.0
    g_beta = 0.0
    A = 0.0
    B = 0.0
    for i in range(n):
        if i > 0:
            dt = t[i] - t[i - 1]
            d = np.exp(-beta * dt)
            B = d * (B + dt * (1.0 + A))
            A = d * (1.0 + A)
        lam = mu + eta * beta * A
        if lam <= 0.0:
            return -np.inf, 0.0, 0.0, 0.0
        ll += np.log(lam)
        g_mu += 1.0 / lam
        g_eta += beta * A / lam
        g_beta += eta * (A - beta * B) / lam
    comp_sum = 0.0
    comp_dbeta = 0.0
    for k in range(n):
        lag = T - t[k]
        e = np.exp(-beta * lag)
        comp_sum += 1.0 - e
        comp_dbeta += lag * e
    ll -= mu * T + eta * comp_sum
    g_mu -= T
    g_eta -= comp_sum
    g_beta -= eta * comp_dbeta
    return ll, g_mu, g_eta, g_beta


@njit(cache=True)
def exp_excitation(t, beta):
    """A_k = sum over j<k of exp(-beta (t_k - t_j))."""
    n = t.shape[0]
    out = np.zeros(n)
    A = 0.0
    for i in range(1, n):
        A = np.exp(-beta * (t[i] - t[i - 1])) * (1.0 + A)
        out[i] = A
    return out


@njit(cache=True)
def pl_loglik_grad(t, T, mu, eta, c, gamma):
    n = t.shape[0]
    gm1 = gamma - 1.0
    logc = np.log(c)
    cg = np.exp(gm1 * logc)
    kappa = eta * gm1 * cg
    dk_eta = gm1 * cg
    dk_c = eta * gm1 * gm1 * cg / c
    dk_gamma = eta * cg * (1.0 + gm1 * logc)
    ll = 0.0
    g_mu = 0.0
    g_eta = 0.0
    g_c = 0.0
    g_gamma = 0.0
    for i in range(n):
        S = 0.0
        S1 = 0.0
        SL = 0.0
        ti = t[i]
        for k in range(i):
            u = ti - t[k] + c
            lu = np.log(u)
            p = np.exp(-gamma * lu)
            S += p
            S1 += p / u
            SL += p * lu
        lam = mu + kappa * S
        if lam <= 0.0:
            return -np.inf, 0.0, 0.0, 0.0, 0.0
        ll += np.log(lam)
        inv = 1.0 / lam
        g_mu += inv
        g_eta += dk_eta * S * inv
        g_c += (dk_c * S - kappa * gamma * S1) * inv
        g_gamma += (dk_gamma * S - kappa * SL) * inv
    comp_sum = 0.0
    comp_dc = 0.0
    comp_dgamma = 0.0
    for k in range(n):
        v = T - t[k] + c
        lr = logc - np.log(v)
        r = np.exp(gm1 * lr)
        comp_sum += 1.0 - r
        comp_dc += r * gm1 * (1.0 / c - 1.0 / v)
        comp_dgamma += r * lr
    ll -= mu * T + eta * comp_sum
    g_mu -= T
    g_eta -= comp_sum
    g_c += eta * comp_dc
    g_gamma += eta * comp_dgamma
    return ll, g_mu, g_eta, g_c, g_gamma


@njit(cache=True)
def pl_excitation(t, c, gamma):
    """S_k = sum over j<k of (t_k - t_j + c)^-gamma."""
    n = t.shape[0]
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for k in range(i):
            s += (t[i] - t[k] + c) ** (-gamma)
        out[i] = s
    return out


@njit(cache=True)
def pl_spent(t, c, gamma):
    """sum over j<k of (1 - (c / (t_k - t_j + c))^(gamma-1)), per k."""
    n = t.shape[0]
    out = np.zeros(n)
    gm1 = gamma - 1.0
    for i in range(n):
        s = 0.0
        for k in range(i):
            s += 1.0 - (c / (t[i] - t[k] + c)) ** gm1
        out[i] = s
    return out


@njit(cache=True)
def exp_thinning(mu, eta, beta, T, seed):
    np.random.seed(seed)
    cap = 1024
    out = np.empty(cap)
    n = 0
    t = 0.0
    excite = 0.0
    jump = eta * beta
    while True:
        bound = mu + excite
        if bound <= 0.0:
            break
        w = np.random.exponential(1.0 / bound)
        t += w
        if t > T:
            break
        excite *= np.exp(-beta * w)
        if np.random.random() * bound <= mu + excite:
            if n == cap:
                cap *= 2
                grown = np.empty(cap)
                grown[:n] = out[:n]
                out = grown
            out[n] = t
            n += 1
            excite += jump
    return out[:n]


@njit(cache=True)
def pl_thinning(mu, eta, c, gamma, T, seed):
    np.random.seed(seed)
    cap = 1024
    out = np.empty(cap)
    n = 0
    t = 0.0
    kappa = eta * (gamma - 1.0) * c ** (gamma - 1.0)
    bound = mu
    while True:
        if bound <= 0.0:
            break
        t += np.random.exponential(1.0 / bound)
        if t > T:
            break
        s = 0.0
        for k in range(n):
            s += (t - out[k] + c) ** (-gamma)
        lam = mu + kappa * s
        if np.random.random() * bound <= lam:
            if n == cap:
                cap *= 2
                grown = np.empty(cap)
                grown[:n] = out[:n]
                out = grown
            out[n] = t
            n += 1
            lam += kappa * c ** (-gamma)
        # kernels decrease with lag, so the intensity right now bounds the future
        bound = lam
    return out[:n]
