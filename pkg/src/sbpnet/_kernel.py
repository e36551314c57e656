"""Compiled event loop of the network simulator.

All state lives in arrays owned by the Python driver so the loop can stop
when a random-number buffer runs dry and be resumed after a refill.
"""

import math

import numpy as np
from numba import njit

# indices into the float scalar state ``fs``
T_NOW, T_WARM, T_END, B_LEN, TIE = 0, 1, 2, 3, 4
# indices into the int scalar state ``is_``
N_BATCH, LOG_N, LOG_CAP = 0, 1, 2


@njit(cache=True, inline="always")
def _phi1(x):
    if abs(x) < 1e-10:
        return 1.0 + 0.5 * x
    return math.expm1(x) / x


@njit(cache=True)
def _exponent(Z, Re, Rs, tau, serving, s, th, hcap, eta, xi, tcap, lam, mu, isL, isE):
    K = Z.shape[0]
    e = 0.0
    for k in range(K):
        z = float(Z[k])
        if th[s, k] != 0.0:
            if isL[k]:
                e += th[s, k] * z
            else:
                e += th[s, k] * min(z, hcap[s])
        if isE[k] and eta[s, k] != 0.0:
            e -= eta[s, k] * min(lam[k] * (Re[k] - tau), tcap[s])
        if xi[s, k] != 0.0:
            r = Rs[k] - tau if serving[k] else Rs[k]
            e -= xi[s, k] * min(mu[k] * r, tcap[s])
    return e


@njit(cache=True)
def _mgf_integral(Z, Re, Rs, d, serving, s, th, hcap, eta, xi, tcap, lam, mu, isL, isE, work):
    K = Z.shape[0]
    n = 0
    work[n] = 0.0
    n += 1
    if tcap[s] < np.inf:
        for k in range(K):
            if isE[k] and eta[s, k] != 0.0:
                tb = Re[k] - tcap[s] / lam[k]
                if 0.0 < tb < d:
                    work[n] = tb
                    n += 1
            if serving[k] and xi[s, k] != 0.0:
                tb = Rs[k] - tcap[s] / mu[k]
                if 0.0 < tb < d:
                    work[n] = tb
                    n += 1
    work[n] = d
    n += 1
    # insertion sort of the breakpoints
    for i in range(1, n):
        v = work[i]
        j = i - 1
        while j >= 0 and work[j] > v:
            work[j + 1] = work[j]
            j -= 1
        work[j + 1] = v
    total = 0.0
    e0 = _exponent(Z, Re, Rs, work[0], serving, s, th, hcap, eta, xi, tcap, lam, mu, isL, isE)
    for i in range(n - 1):
        p0, p1 = work[i], work[i + 1]
        ln = p1 - p0
        e1 = _exponent(Z, Re, Rs, p1, serving, s, th, hcap, eta, xi, tcap, lam, mu, isL, isE)
        if ln > 0.0:
            total += math.exp(e0) * ln * _phi1(e1 - e0)
        e0 = e1
    return total


@njit(cache=True)
def _integrate(b, d, Z, Re, Rs, serving, idle, hp_idle,
               isL, isE, lam, mu, zmax, tail_n, tail_c, cvals,
               th, hcap, eta, xi, tcap, spec_time, work,
               a_time, a_idle, a_busy, a_z, a_z2, a_hist, a_zover, a_hist_hp, a_hist_hpc,
               a_tail_e, a_tail_s, a_mgf, a_mgf_idle):
    K = Z.shape[0]
    a_time[b] += d
    for k in range(K):
        z = Z[k]
        zi = z if z <= zmax else zmax + 1
        a_z[b, k] += z * d
        a_z2[b, k] += float(z) * z * d
        a_hist[b, k, zi] += d
        if z > zmax:
            a_zover[b, k] += z * d
        if idle[k]:
            a_idle[b, k] += d
        if serving[k]:
            a_busy[b, k] += d
        if hp_idle[k]:
            a_hist_hp[b, k, zi] += d
            for ci in range(cvals.shape[0]):
                c = cvals[ci]
                if serving[k]:
                    # R(tau) = Rs - tau <= c  <=>  tau >= Rs - c
                    lo = min(max(Rs[k] - c, 0.0), d)
                    a_hist_hpc[b, ci, k, zi] += d - lo
                elif Rs[k] <= c:
                    a_hist_hpc[b, ci, k, zi] += d
    for p in range(tail_n.shape[0]):
        n1 = tail_n[p] + 1.0
        c = tail_c[p]
        for k in range(K):
            if isE[k]:
                r0 = Re[k]
                if r0 > c:
                    a_tail_e[b, p, k] += (r0 ** n1 - max(r0 - d, c) ** n1) / n1
            if serving[k]:
                r0 = Rs[k]
                if r0 > c:
                    a_tail_s[b, p, k] += (r0 ** n1 - max(r0 - d, c) ** n1) / n1
    for s in range(th.shape[0]):
        if not spec_time[s]:
            continue
        v = _mgf_integral(Z, Re, Rs, d, serving, s, th, hcap, eta, xi, tcap, lam, mu, isL, isE, work)
        a_mgf[b, s] += v
        for k in range(K):
            if idle[k]:
                a_mgf_idle[b, s, k] += v


@njit(cache=True)
def _status(Z, station_of, prio, Hmask, Hpmask, serving, idle, hp_idle):
    K = Z.shape[0]
    J = prio.shape[0]
    for k in range(K):
        serving[k] = False
    for j in range(J):
        for i in range(prio.shape[1]):
            k = prio[j, i]
            if k < 0:
                break
            if Z[k] > 0:
                serving[k] = True
                break
    for k in range(K):
        ok = True
        okp = True
        for h in range(K):
            if Hmask[k, h] and Z[h] > 0:
                ok = False
                if Hpmask[k, h]:
                    okp = False
        idle[k] = ok
        hp_idle[k] = okp


@njit(cache=True)
def _palm_event(b, ev, Zpre, Zpost, Repre, Rspre, Repost, Rspost, serving_dummy,
                palm_zmax, cvals, th, hcap, eta, xi, tcap, spec_palm, lam, mu, isL, isE,
                p_hist, p_rw, p_df, p_df2):
    K = Zpre.shape[0]
    for k in range(K):
        z = Zpre[k]
        zi = z if z <= palm_zmax else palm_zmax + 1
        p_hist[b, ev, k, zi] += 1.0
        for ci in range(cvals.shape[0]):
            p_rw[b, ci, ev, k, zi] += min(Rspre[k], cvals[ci])
    for s in range(th.shape[0]):
        if not spec_palm[s]:
            continue
        e0 = _exponent(Zpre, Repre, Rspre, 0.0, serving_dummy, s, th, hcap, eta, xi, tcap,
                       lam, mu, isL, isE)
        e1 = _exponent(Zpost, Repost, Rspost, 0.0, serving_dummy, s, th, hcap, eta, xi, tcap,
                       lam, mu, isL, isE)
        df = math.exp(e1) - math.exp(e0)
        p_df[b, s, ev] += df
        p_df2[b, s, ev] += df * df


@njit(cache=True)
def run(fs, is_, Z, Re, Rs,
        station_of, prio, Hmask, Hpmask, isL, isE, a, m, lam, mu,
        bufs, pos, route_buf,
        zmax, palm_zmax, tail_n, tail_c, cvals,
        th, hcap, eta, xi, tcap, spec_time, spec_palm,
        a_time, a_idle, a_busy, a_z, a_z2, a_hist, a_zover, a_hist_hp, a_hist_hpc,
        a_tail_e, a_tail_s, a_mgf, a_mgf_idle,
        n_arr, n_srv, routes, p_hist, p_rw, p_df, p_df2, viol,
        log_t, log_kind, log_cls, log_route, log_zpre, log_zpost,
        log_repre, log_rspre, log_repost, log_rspost):
    """Advance the simulation until the horizon or an exhausted buffer.

    Returns 0 at the horizon, otherwise ``1 + stream`` of a buffer that
    must be refilled (streams: arrivals ``k``, services ``K + k``,
    routing ``2K + k``).
    """
    K = Z.shape[0]
    chunk = bufs.shape[1]
    serving = np.zeros(K, dtype=np.bool_)
    idle = np.zeros(K, dtype=np.bool_)
    hp_idle = np.zeros(K, dtype=np.bool_)
    no_serve = np.zeros(K, dtype=np.bool_)
    work = np.empty(2 * K + 4)
    Zpre = np.empty(K, dtype=np.int64)
    Repre = np.empty(K)
    Rspre = np.empty(K)
    fire_a = np.zeros(K, dtype=np.bool_)
    fire_s = np.zeros(K, dtype=np.bool_)
    t = fs[T_NOW]
    t_warm, t_end, blen, tie = fs[T_WARM], fs[T_END], fs[B_LEN], fs[TIE]
    nb = is_[N_BATCH]
    while True:
        for s in range(3 * K):
            if pos[s] >= chunk:
                fs[T_NOW] = t
                return 1 + s
        _status(Z, station_of, prio, Hmask, Hpmask, serving, idle, hp_idle)
        # next event time
        dt = np.inf
        for k in range(K):
            if isE[k] and Re[k] < dt:
                dt = Re[k]
            if serving[k] and Rs[k] < dt:
                dt = Rs[k]
        t_next = t + dt
        stop = t_next > t_end
        if stop:
            t_next = t_end
            dt = t_end - t
        # time integrals over (t, t_next], split at warmup and batch edges
        t0 = t
        while t0 < t_next:
            if t0 < t_warm:
                t1 = min(t_next, t_warm)
                b = -1
            else:
                b = int((t0 - t_warm) / blen)
                if b >= nb:
                    b = nb - 1
                t1 = min(t_next, t_warm + (b + 1) * blen)
                if b == nb - 1:
                    t1 = t_next
            d = t1 - t0
            if b >= 0 and d > 0.0:
                off = t0 - t
                for k in range(K):
                    Repre[k] = Re[k] - off
                    Rspre[k] = Rs[k] - off if serving[k] else Rs[k]
                _integrate(b, d, Z, Repre, Rspre, serving, idle, hp_idle,
                           isL, isE, lam, mu, zmax, tail_n, tail_c, cvals,
                           th, hcap, eta, xi, tcap, spec_time, work,
                           a_time, a_idle, a_busy, a_z, a_z2, a_hist, a_zover, a_hist_hp,
                           a_hist_hpc, a_tail_e, a_tail_s, a_mgf, a_mgf_idle)
            if t1 <= t0:
                break
            t0 = t1
        # advance clocks
        for k in range(K):
            if isE[k]:
                Re[k] -= dt
            if serving[k]:
                Rs[k] -= dt
        t = t_next
        if stop:
            fs[T_NOW] = t
            return 0
        # event block: everything due within the tie tolerance
        for k in range(K):
            fire_a[k] = isE[k] and Re[k] <= tie
            fire_s[k] = serving[k] and Rs[k] <= tie
            if fire_a[k]:
                Re[k] = 0.0
            if fire_s[k]:
                Rs[k] = 0.0
        if t >= t_warm:
            b = int((t - t_warm) / blen)
            if b >= nb:
                b = nb - 1
        else:
            b = -1
        for phase in range(2):
            for k in range(K):
                if phase == 0 and not fire_a[k]:
                    continue
                if phase == 1 and not fire_s[k]:
                    continue
                for h in range(K):
                    Zpre[h] = Z[h]
                    Repre[h] = Re[h]
                    Rspre[h] = Rs[h]
                dest = -1
                if phase == 0:
                    Z[k] += 1
                    Re[k] = a[k] * bufs[k, pos[k]]
                    pos[k] += 1
                    ev = k
                else:
                    if b >= 0:
                        if Z[k] <= 0:
                            viol[b] += 1
                        for h in range(K):
                            if Hpmask[k, h] and Z[h] > 0:
                                viol[b] += 1
                                break
                    Z[k] -= 1
                    dest = route_buf[k, pos[2 * K + k]]
                    pos[2 * K + k] += 1
                    if dest < K:
                        Z[dest] += 1
                    Rs[k] = m[k] * bufs[K + k, pos[K + k]]
                    pos[K + k] += 1
                    ev = K + k
                if b < 0:
                    continue
                if phase == 0:
                    n_arr[b, k] += 1
                else:
                    n_srv[b, k] += 1
                    routes[b, k, dest if dest < K else K] += 1
                _palm_event(b, ev, Zpre, Z, Repre, Rspre, Re, Rs, no_serve,
                            palm_zmax, cvals, th, hcap, eta, xi, tcap, spec_palm, lam, mu,
                            isL, isE, p_hist, p_rw, p_df, p_df2)
                li = is_[LOG_N]
                if li < is_[LOG_CAP]:
                    log_t[li] = t
                    log_kind[li] = phase
                    log_cls[li] = k
                    log_route[li] = dest
                    for h in range(K):
                        log_zpre[li, h] = Zpre[h]
                        log_zpost[li, h] = Z[h]
                        log_repre[li, h] = Repre[h]
                        log_rspre[li, h] = Rspre[h]
                        log_repost[li, h] = Re[h]
                        log_rspost[li, h] = Rs[h]
                    is_[LOG_N] = li + 1
