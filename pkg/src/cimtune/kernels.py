"""Hot loops: instruction emission, cost accounting and functional execution.

All functions here are written in the numba-compatible subset. They take flat
int64/float64 parameter vectors whose layouts are fixed by the index constants
below; the Python-facing modules build those vectors.
"""

import numpy as np

from ._jit import njit

# Emission and timing never allocate; without reference counting the
# many-array helper calls compile to plain loads and stores.
hot = njit(_nrt=False)

# opcodes
LD_IN = 0
UPD_W = 1
CMP = 2
ACC = 3
LD_PSUM = 4
ST_PSUM = 5
ST_OUT = 6
BAR = 7

# engines
XFER = 0
COMPUTE = 1
NO_ENGINE = -1

# instruction row fields
F_OP = 0
F_ENG = 1
F_ROW = 2
F_COL = 3
F_PLANE = 4
F_M0 = 5
F_MCNT = 6
F_K0 = 7
F_KCNT = 8
F_N0 = 9
F_NCNT = 10
F_EXT = 11
F_SRAM = 12
F_STRIDE = 13
F_BITS = 14
F_TAG = 15
NF = 16

# CMP tag bits
TAG_ACCUM = 1  # add into the psum register instead of overwriting it
TAG_REUSE = 2  # input vectors are already latched; no Input SRAM read

# integer parameter vector
P_M = 0
P_K = 1
P_N = 2
P_KRES = 3
P_NRES = 4
P_MTILE = 5
P_KSTRIP = 6
P_NOUT = 7
P_KOUT = 8
P_MOUT = 9
P_TEMPORAL = 10  # 0 IP, 1 WP
P_TILING = 11  # 0 AF, 1 PF
P_SPILL = 12
P_OSABS = 13
P_OSSTRIDE = 14
P_MR = 15
P_MC = 16
P_SCR = 17
P_AL = 18
P_PC = 19
P_DWIN = 20
P_DWW = 21
P_DWOUT = 22
P_DWPS = 23
P_SIMUL = 24
P_IN_BASE = 25
P_IN_RS = 26
P_IN_CS = 27
P_IN_B = 28
P_W_BASE = 29
P_W_RS = 30
P_W_CS = 31
P_W_B = 32
P_OUT_BASE = 33
P_OUT_RS = 34
P_OUT_CS = 35
P_OUT_B = 36
P_PS_BASE = 37
P_PS_RS = 38
P_PS_CS = 39
P_PS_B = 40
P_BW = 41
P_CC = 42
P_WUW = 43
P_IS_SIZE = 44
P_OS_SIZE = 45
NP = 46

# float parameter vector (energies, pJ)
E_MAC = 0
E_UPD = 1
E_IS_RD = 2
E_IS_WR = 3
E_OS_RD = 4
E_OS_WR = 5
E_EMA = 6
E_ACC = 7
NE = 8

# integer simulation state
S_TX = 0
S_TC = 1
S_STALL_BW = 2
S_STALL_HZ = 3
S_MACS = 4
S_CMP_CYC = 5
S_EXT_RD = 6
S_EXT_WR = 7
S_IS_RD = 8
S_IS_WR = 9
S_OS_RD = 10
S_OS_WR = 11
S_CIM_WR = 12
S_EXT_PSUM = 13
S_NINSTR = 14
S_XFER_BUSY = 15
S_CMP_BUSY = 16
NS = 17

# energy accumulators
A_CIM = 0
A_UPD = 1
A_IS = 2
A_OS = 3
A_EMA = 4
NA = 5

# emission modes
MODE_COUNT = 0
MODE_WRITE = 1
MODE_SIM = 2

# hazard regions
R_IS = 0
R_PORT = 1
R_PLANE0 = 2

# emission scratch state
H_PHASE = 0
H_CNT = 1
H_CUR_W = 2
H_CUR_IN = 3


@hot
def cdiv(a, b):
    return -(-a // b)


@hot
def sim_step(row, ip, ep, st, en):
    """Advance the two-engine timing model and energy counters by one instruction."""
    op = row[F_OP]
    st[S_NINSTR] += 1
    if op == BAR:
        t = max(st[S_TX], st[S_TC])
        st[S_STALL_BW] += t - st[S_TC]
        st[S_STALL_HZ] += t - st[S_TX]
        st[S_TX] = t
        st[S_TC] = t
        return
    bits = row[F_BITS]
    bw = ip[P_BW]
    if op == CMP:
        rows = row[F_MCNT]
        macs = rows * row[F_KCNT] * row[F_NCNT]
        cost = rows * ip[P_CC]
        st[S_TC] += cost
        st[S_CMP_BUSY] += cost
        st[S_CMP_CYC] += cost
        st[S_MACS] += macs
        en[A_CIM] += macs * ep[E_MAC]
        if (row[F_TAG] & TAG_REUSE) == 0:
            rd = rows * row[F_KCNT] * ip[P_DWIN]
            st[S_IS_RD] += rd
            en[A_IS] += rd * ep[E_IS_RD]
    elif op == ACC:
        st[S_TC] += 1
        st[S_CMP_BUSY] += 1
        words = row[F_MCNT] * row[F_NCNT]
        wb = words * ip[P_DWPS]
        st[S_OS_WR] += wb
        en[A_OS] += wb * ep[E_OS_WR]
        if (row[F_TAG] & TAG_ACCUM) != 0:
            st[S_OS_RD] += wb
            en[A_OS] += wb * ep[E_OS_RD]
        en[A_CIM] += words * ep[E_ACC]
    else:
        cost = cdiv(bits, bw)
        if op == LD_IN:
            st[S_EXT_RD] += bits
            st[S_IS_WR] += bits
            en[A_EMA] += bits * ep[E_EMA]
            en[A_IS] += bits * ep[E_IS_WR]
        elif op == UPD_W:
            port = row[F_NCNT] * cdiv(row[F_KCNT] * ip[P_DWW], ip[P_WUW])
            if port > cost:
                cost = port
            st[S_EXT_RD] += bits
            st[S_CIM_WR] += bits
            en[A_EMA] += bits * ep[E_EMA]
            en[A_UPD] += bits * ep[E_UPD]
        elif op == LD_PSUM:
            st[S_EXT_RD] += bits
            st[S_EXT_PSUM] += bits
            st[S_OS_WR] += bits
            en[A_EMA] += bits * ep[E_EMA]
            en[A_OS] += bits * ep[E_OS_WR]
        elif op == ST_PSUM:
            st[S_EXT_WR] += bits
            st[S_EXT_PSUM] += bits
            st[S_OS_RD] += bits
            en[A_EMA] += bits * ep[E_EMA]
            en[A_OS] += bits * ep[E_OS_RD]
        elif op == ST_OUT:
            rd = row[F_MCNT] * row[F_NCNT] * ip[P_DWPS]
            st[S_EXT_WR] += bits
            st[S_OS_RD] += rd
            en[A_EMA] += bits * ep[E_EMA]
            en[A_OS] += rd * ep[E_OS_RD]
        st[S_TX] += cost
        st[S_XFER_BUSY] += cost


@hot
def simulate_rows(body, ip, ep, st, en):
    for i in range(body.shape[0]):
        sim_step(body[i], ip, ep, st, en)


# ------------------------------------------------------------------ emission


@hot
def _sink(mode, buf, row, ip, ep, st, en, hz):
    if mode == MODE_WRITE:
        n = hz[H_CNT]
        for f in range(NF):
            buf[n, f] = row[f]
    elif mode == MODE_SIM:
        sim_step(row, ip, ep, st, en)
    hz[H_CNT] += 1


@hot
def _bar(mode, buf, bar, ip, ep, st, en, hz):
    _sink(mode, buf, bar, ip, ep, st, en, hz)
    hz[H_PHASE] += 1


@hot
def _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, r1, r2, w1, w2):
    """Emit ``row``, preceded by a BAR if it conflicts with the other engine."""
    eng = row[F_ENG]
    oth = 1 - eng
    ph = hz[H_PHASE]
    hit = False
    if w1 >= 0 and (rds[oth, w1] == ph or wrs[oth, w1] == ph):
        hit = True
    if w2 >= 0 and (rds[oth, w2] == ph or wrs[oth, w2] == ph):
        hit = True
    if r1 >= 0 and wrs[oth, r1] == ph:
        hit = True
    if r2 >= 0 and wrs[oth, r2] == ph:
        hit = True
    if hit:
        _bar(mode, buf, bar, ip, ep, st, en, hz)
        ph = hz[H_PHASE]
    if r1 >= 0:
        rds[eng, r1] = ph
    if r2 >= 0:
        rds[eng, r2] = ph
    if w1 >= 0:
        wrs[eng, w1] = ph
    if w2 >= 0:
        wrs[eng, w2] = ph
    _sink(mode, buf, row, ip, ep, st, en, hz)


@hot
def _set(row, op, eng, r, c, p, m0, mcnt, k0, kcnt, n0, ncnt, ext, sram, stride, bits, tag):
    row[F_OP] = op
    row[F_ENG] = eng
    row[F_ROW] = r
    row[F_COL] = c
    row[F_PLANE] = p
    row[F_M0] = m0
    row[F_MCNT] = mcnt
    row[F_K0] = k0
    row[F_KCNT] = kcnt
    row[F_N0] = n0
    row[F_NCNT] = ncnt
    row[F_EXT] = ext
    row[F_SRAM] = sram
    row[F_STRIDE] = stride
    row[F_BITS] = bits
    row[F_TAG] = tag


@hot
def _load_weights(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, i, j):
    key = i * ip[P_NOUT] + j
    if hz[H_CUR_W] == key:
        return
    hz[H_CUR_W] = key
    K = ip[P_K]
    N = ip[P_N]
    mr = ip[P_MR]
    mc = ip[P_MC]
    al = ip[P_AL]
    pc = ip[P_PC]
    scr = ip[P_SCR]
    dww = ip[P_DWW]
    chunk = mc * al
    chan = mr * pc
    K0 = i * ip[P_KRES]
    Kc = min(ip[P_KRES], K - K0)
    N0 = j * ip[P_NRES]
    Nc = min(ip[P_NRES], N - N0)
    af = ip[P_TILING] == 0
    nplanes = cdiv(Kc, chunk) if af else cdiv(Nc, chan)
    port = -1 if ip[P_SIMUL] != 0 else R_PORT
    plane_bits = al * pc * dww
    for p in range(nplanes):
        if af:
            kp0 = K0 + p * chunk
            kpc = min(chunk, K0 + Kc - kp0)
            np0 = N0
            npc = Nc
        else:
            kp0 = K0
            kpc = Kc
            np0 = N0 + p * chan
            npc = min(chan, N0 + Nc - np0)
        for r in range(mr):
            n0 = np0 + r * pc
            if n0 >= np0 + npc:
                break
            nc = min(pc, np0 + npc - n0)
            for c in range(mc):
                k0 = kp0 + c * al
                if k0 >= kp0 + kpc:
                    break
                kc = min(al, kp0 + kpc - k0)
                ext = ip[P_W_BASE] + (k0 * ip[P_W_RS] + n0 * ip[P_W_CS]) * ip[P_W_B]
                sram = ((r * mc + c) * scr + p) * plane_bits
                _set(row, UPD_W, XFER, r, c, p, 0, 0, k0, kc, n0, nc, ext, sram, 0, kc * nc * dww, 0)
                _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, -1, -1, R_PLANE0 + p, port)


@hot
def _block(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, t, i, j):
    M = ip[P_M]
    K = ip[P_K]
    N = ip[P_N]
    mr = ip[P_MR]
    mc = ip[P_MC]
    al = ip[P_AL]
    pc = ip[P_PC]
    scr = ip[P_SCR]
    dwin = ip[P_DWIN]
    dwps = ip[P_DWPS]
    chunk = mc * al
    chan = mr * pc
    mt = ip[P_MTILE]
    M0 = t * mt
    Mc = min(mt, M - M0)
    K0 = i * ip[P_KRES]
    Kc = min(ip[P_KRES], K - K0)
    N0 = j * ip[P_NRES]
    Nc = min(ip[P_NRES], N - N0)
    first_k = i == 0
    last_k = i == ip[P_KOUT] - 1
    spill = ip[P_SPILL] != 0
    osabs = ip[P_OSABS] != 0
    ostride = ip[P_OSSTRIDE]
    oblk = t if osabs else 0
    oreg = R_PLANE0 + scr + oblk
    os_base = (M0 if osabs else 0) * ostride * dwps
    port = -1 if ip[P_SIMUL] != 0 else R_PORT
    af = ip[P_TILING] == 0
    acc_tag = 0 if first_k else TAG_ACCUM

    if spill and not first_k:
        ext = ip[P_PS_BASE] + (M0 * ip[P_PS_RS] + N0 * ip[P_PS_CS]) * ip[P_PS_B]
        _set(row, LD_PSUM, XFER, 0, 0, 0, M0, Mc, 0, 0, N0, Nc, ext, os_base, ostride, Mc * Nc * dwps, 0)
        _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, -1, -1, oreg, -1)

    ks = ip[P_KSTRIP]
    nstrips = cdiv(Kc, ks)
    for s in range(nstrips):
        sK0 = K0 + s * ks
        sKc = min(ks, K0 + Kc - sK0)
        key = t * ip[P_KOUT] + i if nstrips == 1 else -2
        if key < 0 or hz[H_CUR_IN] != key:
            hz[H_CUR_IN] = key
            ext = ip[P_IN_BASE] + (M0 * ip[P_IN_RS] + sK0 * ip[P_IN_CS]) * ip[P_IN_B]
            _set(row, LD_IN, XFER, 0, 0, 0, M0, Mc, sK0, sKc, 0, 0, ext, 0, sKc, Mc * sKc * dwin, 0)
            _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, -1, -1, R_IS, -1)
        if af:
            p_lo = (sK0 - K0) // chunk
            p_hi = cdiv(sK0 + sKc - K0, chunk)
            for p in range(p_lo, p_hi):
                kp0 = K0 + p * chunk
                kpc = min(chunk, K0 + Kc - kp0)
                tag = TAG_ACCUM if p > 0 else 0
                _set(row, CMP, COMPUTE, 0, 0, p, M0, Mc, kp0, kpc, N0, Nc, 0, (kp0 - sK0) * dwin, sKc, 0, tag)
                _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, R_IS, R_PLANE0 + p, port, -1)
        else:
            nplanes = cdiv(Nc, chan)
            for p in range(nplanes):
                np0 = N0 + p * chan
                npc = min(chan, N0 + Nc - np0)
                tag = TAG_REUSE if p > 0 else 0
                _set(row, CMP, COMPUTE, 0, 0, p, M0, Mc, K0, Kc, np0, npc, 0, 0, sKc, 0, tag)
                _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, R_IS, R_PLANE0 + p, port, -1)
                sram = os_base + (np0 - N0) * dwps
                _set(row, ACC, COMPUTE, 0, 0, 0, M0, Mc, 0, 0, np0, npc, 0, sram, ostride, Mc * npc * dwps, acc_tag)
                _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, oreg, -1, oreg, -1)
    if af:
        _set(row, ACC, COMPUTE, 0, 0, 0, M0, Mc, 0, 0, N0, Nc, 0, os_base, ostride, Mc * Nc * dwps, acc_tag)
        _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, oreg, -1, oreg, -1)

    if last_k:
        ext = ip[P_OUT_BASE] + (M0 * ip[P_OUT_RS] + N0 * ip[P_OUT_CS]) * ip[P_OUT_B]
        _set(row, ST_OUT, XFER, 0, 0, 0, M0, Mc, 0, 0, N0, Nc, ext, os_base, ostride, Mc * Nc * ip[P_DWOUT], 0)
        _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, oreg, -1, -1, -1)
    elif spill:
        ext = ip[P_PS_BASE] + (M0 * ip[P_PS_RS] + N0 * ip[P_PS_CS]) * ip[P_PS_B]
        _set(row, ST_PSUM, XFER, 0, 0, 0, M0, Mc, 0, 0, N0, Nc, ext, os_base, ostride, Mc * Nc * dwps, 0)
        _issue(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, oreg, -1, -1, -1)


def emit(mode, buf, ip, ep, st, en):
    """Walk the tiled loop nest, sending each instruction to the chosen sink.

    MODE_COUNT only counts, MODE_WRITE fills ``buf`` (n x NF), MODE_SIM feeds
    the cost model directly so large flows never materialize. Returns the
    instruction count.
    """
    nblocks = ip[P_MOUT] if ip[P_OSABS] != 0 else 1
    nreg = R_PLANE0 + ip[P_SCR] + nblocks
    rds = np.full((2, nreg), -1, dtype=np.int64)
    wrs = np.full((2, nreg), -1, dtype=np.int64)
    hz = np.zeros(4, dtype=np.int64)
    hz[H_CUR_W] = -1
    hz[H_CUR_IN] = -1
    row = np.zeros(NF, dtype=np.int64)
    bar = np.zeros(NF, dtype=np.int64)
    bar[F_OP] = BAR
    bar[F_ENG] = NO_ENGINE
    _emit(mode, buf, ip, ep, st, en, hz, rds, wrs, row, bar)
    return int(hz[H_CNT])


@hot
def _emit(mode, buf, ip, ep, st, en, hz, rds, wrs, row, bar):
    nout = ip[P_NOUT]
    kout = ip[P_KOUT]
    mout = ip[P_MOUT]
    if ip[P_TEMPORAL] == 0:
        for j in range(nout):
            for i in range(kout):
                _load_weights(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, i, j)
                for t in range(mout):
                    _block(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, t, i, j)
    else:
        for t in range(mout):
            for j in range(nout):
                for i in range(kout):
                    _load_weights(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, i, j)
                    _block(mode, buf, row, bar, ip, ep, st, en, hz, rds, wrs, t, i, j)
    _bar(mode, buf, bar, ip, ep, st, en, hz)


# ------------------------------------------------------- functional execution

ERR_OK = 0
ERR_EXT_OOB = 1
ERR_CIM_UNINIT = 2
ERR_IS_UNINIT = 3
ERR_OS_UNINIT = 4
ERR_SRAM_OOB = 5
ERR_CIM_COORD = 6
ERR_NO_LATCH = 7
ERR_OPCODE = 8


@njit
def execute(body, ip, ext_a, ext_b, ext_out, ext_ps, out_written):
    """Interpret a flow against modeled memories with exact integer arithmetic.

    ``ext_a``/``ext_b`` hold the canonical input and weight operands in their
    external layouts. Returns (error code, instruction index).
    """
    mr = ip[P_MR]
    mc = ip[P_MC]
    al = ip[P_AL]
    pc = ip[P_PC]
    scr = ip[P_SCR]
    dwin = ip[P_DWIN]
    dwps = ip[P_DWPS]
    is_slots = ip[P_IS_SIZE] // dwin
    os_slots = ip[P_OS_SIZE] // dwps
    is_mem = np.zeros(is_slots, dtype=np.int64)
    is_ok = np.zeros(is_slots, dtype=np.bool_)
    os_mem = np.zeros(os_slots, dtype=np.int64)
    os_ok = np.zeros(os_slots, dtype=np.bool_)
    cim = np.zeros((mr, mc, scr, al, pc), dtype=np.int64)
    cim_ok = np.zeros((mr, mc, scr, al, pc), dtype=np.bool_)
    maxrows = max(ip[P_MTILE], 1)
    chan = mr * pc
    chunk = mc * al
    preg = np.zeros((maxrows, chan), dtype=np.int64)
    ireg = np.zeros((maxrows, chunk), dtype=np.int64)
    latched = False
    lrows = 0
    lk = 0
    for idx in range(body.shape[0]):
        row = body[idx]
        op = row[F_OP]
        if op == BAR:
            continue
        rows = row[F_MCNT]
        if op == LD_IN:
            e0 = row[F_EXT] - ip[P_IN_BASE]
            if e0 < 0 or e0 % ip[P_IN_B] != 0:
                return ERR_EXT_OOB, idx
            e0 //= ip[P_IN_B]
            s0 = row[F_SRAM] // dwin
            for a in range(rows):
                for b in range(row[F_KCNT]):
                    e = e0 + a * ip[P_IN_RS] + b * ip[P_IN_CS]
                    if e < 0 or e >= ext_a.shape[0]:
                        return ERR_EXT_OOB, idx
                    s = s0 + a * row[F_STRIDE] + b
                    if s < 0 or s >= is_slots:
                        return ERR_SRAM_OOB, idx
                    is_mem[s] = ext_a[e]
                    is_ok[s] = True
        elif op == UPD_W:
            r = row[F_ROW]
            c = row[F_COL]
            p = row[F_PLANE]
            kc = row[F_KCNT]
            nc = row[F_NCNT]
            if r < 0 or r >= mr or c < 0 or c >= mc or p < 0 or p >= scr or kc > al or nc > pc:
                return ERR_CIM_COORD, idx
            e0 = row[F_EXT] - ip[P_W_BASE]
            if e0 < 0 or e0 % ip[P_W_B] != 0:
                return ERR_EXT_OOB, idx
            e0 //= ip[P_W_B]
            cim_ok[r, c, p, :, :] = False
            for x in range(kc):
                for q in range(nc):
                    e = e0 + x * ip[P_W_RS] + q * ip[P_W_CS]
                    if e < 0 or e >= ext_b.shape[0]:
                        return ERR_EXT_OOB, idx
                    cim[r, c, p, x, q] = ext_b[e]
                    cim_ok[r, c, p, x, q] = True
        elif op == CMP:
            p = row[F_PLANE]
            kc = row[F_KCNT]
            nc = row[F_NCNT]
            if p < 0 or p >= scr or kc > chunk or nc > chan or rows > maxrows:
                return ERR_CIM_COORD, idx
            if (row[F_TAG] & TAG_REUSE) != 0:
                if not latched or lrows != rows or lk != kc:
                    return ERR_NO_LATCH, idx
            else:
                s0 = row[F_SRAM] // dwin
                for a in range(rows):
                    for x in range(kc):
                        s = s0 + a * row[F_STRIDE] + x
                        if s < 0 or s >= is_slots:
                            return ERR_SRAM_OOB, idx
                        if not is_ok[s]:
                            return ERR_IS_UNINIT, idx
                        ireg[a, x] = is_mem[s]
                latched = True
                lrows = rows
                lk = kc
            if (row[F_TAG] & TAG_ACCUM) == 0:
                preg[:, :] = 0
            for r in range(mr):
                nlo = r * pc
                if nlo >= nc:
                    break
                nn = min(pc, nc - nlo)
                for c in range(mc):
                    klo = c * al
                    if klo >= kc:
                        break
                    kk = min(al, kc - klo)
                    for x in range(kk):
                        for q in range(nn):
                            if not cim_ok[r, c, p, x, q]:
                                return ERR_CIM_UNINIT, idx
                    for a in range(rows):
                        for q in range(nn):
                            acc = 0
                            for x in range(kk):
                                acc += ireg[a, klo + x] * cim[r, c, p, x, q]
                            preg[a, nlo + q] += acc
        elif op == ACC:
            s0 = row[F_SRAM] // dwps
            nc = row[F_NCNT]
            if rows > maxrows or nc > chan:
                return ERR_CIM_COORD, idx
            accum = (row[F_TAG] & TAG_ACCUM) != 0
            for a in range(rows):
                for b in range(nc):
                    s = s0 + a * row[F_STRIDE] + b
                    if s < 0 or s >= os_slots:
                        return ERR_SRAM_OOB, idx
                    if accum:
                        if not os_ok[s]:
                            return ERR_OS_UNINIT, idx
                        os_mem[s] += preg[a, b]
                    else:
                        os_mem[s] = preg[a, b]
                        os_ok[s] = True
        elif op == LD_PSUM or op == ST_PSUM or op == ST_OUT:
            if op == ST_OUT:
                base = ip[P_OUT_BASE]
                rs = ip[P_OUT_RS]
                cs = ip[P_OUT_CS]
                eb = ip[P_OUT_B]
                dst = ext_out
            else:
                base = ip[P_PS_BASE]
                rs = ip[P_PS_RS]
                cs = ip[P_PS_CS]
                eb = ip[P_PS_B]
                dst = ext_ps
            e0 = row[F_EXT] - base
            if e0 < 0 or e0 % eb != 0:
                return ERR_EXT_OOB, idx
            e0 //= eb
            s0 = row[F_SRAM] // dwps
            for a in range(rows):
                for b in range(row[F_NCNT]):
                    e = e0 + a * rs + b * cs
                    if e < 0 or e >= dst.shape[0]:
                        return ERR_EXT_OOB, idx
                    s = s0 + a * row[F_STRIDE] + b
                    if s < 0 or s >= os_slots:
                        return ERR_SRAM_OOB, idx
                    if op == LD_PSUM:
                        os_mem[s] = dst[e]
                        os_ok[s] = True
                    else:
                        if not os_ok[s]:
                            return ERR_OS_UNINIT, idx
                        dst[e] = os_mem[s]
                        if op == ST_OUT:
                            out_written[e] += 1
        else:
            return ERR_OPCODE, idx
    return ERR_OK, -1
