"""QPSK modulation and a rate-1/2 LDPC code for the digital baseline chain.

Wire contract: bits are mapped to symbols in pairs (b0, b1) with b0 on the
in-phase axis and b1 on quadrature, Gray-mapped as
symbol = ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2). LLRs follow the convention
log p(bit=0) / p(bit=1), so a positive LLR means "bit is 0".

The LDPC code is a regular (3,6) construction: column sockets are matched
to row sockets by a seeded permutation, double edges are repaired by edge
swaps and 4-cycles are removed best-effort. A systematic encoder is
derived by GF(2) elimination; the message-bit column positions are
recorded on the code object. Decoding is normalized min-sum (scale 0.75)
with early exit once all parity checks are satisfied. No row padding is
needed: with m = n/2 checks, 3n column sockets exactly fill 6m row sockets
for any even n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSpec, RngStream, apply, noise_variance
from .errors import ConstructionError, InvalidArgumentError

_SQRT2 = math.sqrt(2.0)
_MINSUM_SCALE = 0.75
_LLR_CLIP = 30.0


def qfunc(x: float) -> float:
    """Gaussian tail probability Q(x)."""
    return 0.5 * math.erfc(x / _SQRT2)


def qpsk_modulate(bits: np.ndarray) -> np.ndarray:
    """Map a {0,1} bit array (even length) to unit-energy QPSK symbols."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % 2 != 0:
        raise InvalidArgumentError("qpsk_modulate needs an even number of bits")
    i = 1.0 - 2.0 * bits[0::2]
    q = 1.0 - 2.0 * bits[1::2]
    return (i + 1j * q) / _SQRT2


def qpsk_demod_llr(block: np.ndarray, noise_var: float) -> np.ndarray:
    """Soft-demodulate QPSK symbols into per-bit LLRs.

    For received y: LLR(b0) = 2 sqrt(2) Re(y) / noise_var and
    LLR(b1) = 2 sqrt(2) Im(y) / noise_var, interleaved to match the
    modulator's bit order. ``noise_var`` is the total complex variance.
    """
    if not (noise_var > 0.0):
        raise InvalidArgumentError("noise_var must be positive")
    block = np.asarray(block, dtype=np.complex128).ravel()
    llrs = np.empty(2 * block.size, dtype=np.float64)
    scale = 2.0 * _SQRT2 / noise_var
    llrs[0::2] = scale * block.real
    llrs[1::2] = scale * block.imag
    return llrs


@dataclass
class LdpcCode:
    """A regular (3,6) rate-1/2 code plus precomputed decode structures."""

    n: int
    k: int
    construction_seed: int
    erow: np.ndarray        # (3n,) check index of each edge
    ecol: np.ndarray        # (3n,) variable index of each edge
    re_idx: np.ndarray      # (m, 6) edge ids grouped by check
    ce_idx: np.ndarray      # (n, 3) edge ids grouped by variable
    row_cols: np.ndarray    # (m, 6) variable ids per check
    msg_cols: np.ndarray    # (k,) codeword positions carrying message bits
    pivot_cols: np.ndarray  # (m,) codeword positions carrying parity bits
    parity_map: np.ndarray  # (m, k) GF(2) map from message to parity bits
    _gen: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.n - self.k

    def parity_check_matrix(self) -> np.ndarray:
        """Dense H as uint8, (m, n)."""
        h = np.zeros((self.m, self.n), dtype=np.uint8)
        h[self.erow, self.ecol] ^= 1
        return h

    def generator_matrix(self) -> np.ndarray:
        """Dense systematic G as uint8, (k, n). G H^T = 0 over GF(2)."""
        if self._gen is None:
            g = np.zeros((self.k, self.n), dtype=np.uint8)
            g[np.arange(self.k), self.msg_cols] = 1
            g[:, self.pivot_cols] = self.parity_map.T
            self._gen = g
        return self._gen

    def syndrome_ok(self, words: np.ndarray) -> np.ndarray:
        """Per-frame parity check for hard words of shape (B, n)."""
        par = words[:, self.row_cols].sum(axis=2) % 2
        return ~par.any(axis=1)


def _edge_matrix(erow: np.ndarray, ecol: np.ndarray, m: int, n: int) -> np.ndarray:
    a = np.zeros((m, n), dtype=np.uint8)
    np.add.at(a, (erow, ecol), 1)
    return a


def _repair_multi_edges(erow, ecol, m, n, g: np.random.Generator) -> bool:
    """Swap row endpoints until every (row, col) pair is distinct."""
    for _ in range(400):
        counts = _edge_matrix(erow, ecol, m, n)
        bad = np.flatnonzero(counts[erow, ecol] > 1)
        if bad.size == 0:
            return True
        for e in bad:
            partner = int(g.integers(0, erow.size))
            erow[e], erow[partner] = erow[partner], erow[e]
    return False


def _reduce_4cycles(erow, ecol, m, n, g: np.random.Generator, passes: int = 30):
    """Best-effort 4-cycle removal: swap one edge of each offending pair."""
    for _ in range(passes):
        # Columns sharing >= 2 rows form a 4-cycle. Detect via row-pair keys.
        by_col = [[] for _ in range(n)]
        for e in range(erow.size):
            by_col[ecol[e]].append(e)
        seen: dict[tuple[int, int], int] = {}
        offenders: list[int] = []
        for c in range(n):
            edges = by_col[c]
            rows = sorted((int(erow[e]), e) for e in edges)
            for a in range(len(rows)):
                for b in range(a + 1, len(rows)):
                    key = (rows[a][0], rows[b][0])
                    if key[0] == key[1]:
                        continue
                    if key in seen and ecol[seen[key]] != c:
                        offenders.append(rows[b][1])
                    else:
                        seen[key] = rows[b][1]
        if not offenders:
            return
        for e in offenders:
            partner = int(g.integers(0, erow.size))
            erow[e], erow[partner] = erow[partner], erow[e]
        if not _repair_multi_edges(erow, ecol, m, n, g):
            return


def _gf2_systematize(h: np.ndarray):
    """Row-reduce H over GF(2). Returns (msg_cols, pivot_cols, parity_map) or None."""
    m, n = h.shape
    r = h.copy()
    pivot_cols = []
    row = 0
    for col in range(n):
        if row == m:
            break
        hit = np.flatnonzero(r[row:, col])
        if hit.size == 0:
            continue
        p = row + hit[0]
        if p != row:
            r[[row, p]] = r[[p, row]]
        others = np.flatnonzero(r[:, col])
        others = others[others != row]
        if others.size:
            r[others] ^= r[row]
        pivot_cols.append(col)
        row += 1
    if row < m:
        return None
    pivot_cols = np.asarray(pivot_cols, dtype=np.int64)
    msg_cols = np.setdiff1d(np.arange(n, dtype=np.int64), pivot_cols)
    parity_map = r[:, msg_cols].astype(np.uint8)
    return msg_cols, pivot_cols, parity_map


def ldpc_new(n: int, construction_seed: int) -> LdpcCode:
    """Construct a regular (3,6) rate-1/2 code of length ``n``.

    Deterministic for a given (n, seed). Raises ConstructionError when n is
    too small or no full-rank parity matrix is found after bounded retries.
    """
    if n % 2 != 0 or n < 64:
        raise ConstructionError(f"codeword length must be even and >= 64, got {n}")
    m = n // 2
    for attempt in range(20):
        g = np.random.default_rng(
            np.random.SeedSequence([construction_seed & (2**64 - 1), attempt])
        )
        ecol = np.repeat(np.arange(n, dtype=np.int64), 3)
        erow = np.repeat(np.arange(m, dtype=np.int64), 6)[g.permutation(3 * n)]
        if not _repair_multi_edges(erow, ecol, m, n, g):
            continue
        _reduce_4cycles(erow, ecol, m, n, g)
        counts = _edge_matrix(erow, ecol, m, n)
        if (counts > 1).any():
            continue
        sysform = _gf2_systematize(counts)
        if sysform is None:
            continue
        msg_cols, pivot_cols, parity_map = sysform
        order_r = np.lexsort((np.arange(3 * n), erow))
        order_c = np.lexsort((np.arange(3 * n), ecol))
        re_idx = order_r.reshape(m, 6)
        ce_idx = order_c.reshape(n, 3)
        return LdpcCode(
            n=n,
            k=m,
            construction_seed=construction_seed,
            erow=erow,
            ecol=ecol,
            re_idx=re_idx,
            ce_idx=ce_idx,
            row_cols=ecol[re_idx],
            msg_cols=msg_cols,
            pivot_cols=pivot_cols,
            parity_map=parity_map,
        )
    raise ConstructionError(f"no full-rank (3,6) code found for n={n}")


def ldpc_encode(code: LdpcCode, msg: np.ndarray) -> np.ndarray:
    """Systematically encode ``k`` message bits into an ``n``-bit codeword."""
    msg = np.asarray(msg, dtype=np.uint8).ravel()
    if msg.size != code.k:
        raise InvalidArgumentError(f"message length must be {code.k}, got {msg.size}")
    return _encode_batch(code, msg[None, :])[0]


def _encode_batch(code: LdpcCode, msgs: np.ndarray) -> np.ndarray:
    cw = np.zeros((msgs.shape[0], code.n), dtype=np.uint8)
    cw[:, code.msg_cols] = msgs
    cw[:, code.pivot_cols] = (msgs.astype(np.int64) @ code.parity_map.T.astype(np.int64)) % 2
    return cw


def ldpc_decode(code: LdpcCode, llrs: np.ndarray, max_iters: int = 50):
    """Decode one frame of ``n`` LLRs. Returns (message_bits, converged)."""
    llrs = np.asarray(llrs, dtype=np.float64).ravel()
    if llrs.size != code.n:
        raise InvalidArgumentError(f"llr length must be {code.n}, got {llrs.size}")
    if max_iters < 1:
        raise InvalidArgumentError("max_iters must be >= 1")
    msgs, conv, _ = decode_batch(code, llrs[None, :], max_iters)
    return msgs[0], bool(conv[0])


def decode_batch(code: LdpcCode, llrs: np.ndarray, max_iters: int = 50):
    """Normalized min-sum decoding of ``B`` frames at once.

    Returns (messages (B, k), converged (B,), iterations (B,)). A frame is
    reported converged only when its parity checks are all satisfied; its
    hard decision is frozen at the first iteration where that happens.
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.ndim != 2 or llrs.shape[1] != code.n:
        raise InvalidArgumentError("llrs must have shape (B, n)")
    b = llrs.shape[0]
    llrs = np.clip(llrs, -1e12, 1e12)
    v2c = llrs[:, code.ecol].copy()
    c2v = np.zeros_like(v2c)
    out = np.zeros((b, code.n), dtype=np.uint8)
    done = np.zeros(b, dtype=bool)
    iters = np.full(b, max_iters, dtype=np.int64)
    for it in range(1, max_iters + 1):
        mv = v2c[:, code.re_idx]
        sgn = np.where(mv < 0.0, -1.0, 1.0)
        prod = sgn.prod(axis=2, keepdims=True)
        av = np.abs(mv)
        part = np.partition(av, 1, axis=2)
        m1 = part[:, :, :1]
        m2 = part[:, :, 1:2]
        mag = np.where(av <= m1, m2, m1)
        c2v[:, code.re_idx] = _MINSUM_SCALE * prod * sgn * mag
        total = llrs + c2v[:, code.ce_idx].sum(axis=2)
        v2c = np.clip(total[:, code.ecol] - c2v, -_LLR_CLIP, _LLR_CLIP)
        hard = (total < 0.0).astype(np.uint8)
        ok = code.syndrome_ok(hard)
        fresh = ok & ~done
        if fresh.any():
            out[fresh] = hard[fresh]
            iters[fresh] = it
            done |= ok
        if done.all():
            break
    # Non-converged frames report their final hard decision.
    if not done.all():
        total = llrs + c2v[:, code.ce_idx].sum(axis=2)
        hard = (total < 0.0).astype(np.uint8)
        out[~done] = hard[~done]
    return out[:, code.msg_cols], done, iters


def digital_link(payload: np.ndarray, spec: ChannelSpec, code: LdpcCode,
                 rng: RngStream, max_iters: int = 50):
    """Run a bit payload through the LDPC + QPSK + channel chain.

    The payload is split into k-bit frames (last frame zero-padded), each
    frame encoded, modulated, sent through the channel, soft-demodulated
    and decoded. Returns (received payload trimmed to the input length,
    count of frames whose decoder did not converge).
    """
    payload = np.asarray(payload, dtype=np.uint8).ravel()
    if payload.size == 0:
        raise InvalidArgumentError("payload must be non-empty")
    nframes = -(-payload.size // code.k)
    padded = np.zeros(nframes * code.k, dtype=np.uint8)
    padded[: payload.size] = payload
    cws = _encode_batch(code, padded.reshape(nframes, code.k))
    tx = qpsk_modulate(cws.ravel())
    rx = apply(tx, spec, rng)
    nv = noise_variance(spec.snr_db) if spec.kind == "awgn" else 1e-12
    llrs = qpsk_demod_llr(rx, nv).reshape(nframes, code.n)
    msgs, converged, _ = decode_batch(code, llrs, max_iters)
    received = msgs.ravel()[: payload.size]
    return received, int((~converged).sum())
