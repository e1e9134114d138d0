"""Secure sub-protocols over replicated shares: the per-party engine.

Every operation here is SPMD: each of the three parties runs the same
method on its own share pair and the methods exchange messages through
the party's transport links. Interactive operations are vectorized, so
one invocation over an n-element array costs one message per party
regardless of n wherever possible (multiplication and inner products
reshare exactly one ring element per output element).

Value conventions, used consistently by the higher-level protocols:

* continuous data (gene expression, bin means, noise) is fixed-point
  encoded with ``f`` fractional bits;
* comparison bits, bin indices, one-hot indicators and counts are raw
  unscaled ring integers, so products and sums over them are exact.

Comparisons extract the sign bit of a difference through a binary
carry-save adder plus Kogge-Stone carry propagation evaluated on packed
64-bit words, with AND gates costing one resharing round each.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ParameterError, ProtocolError
from .prf import PrfStream, derive_key, generator_from_key
from .ring import FixedPointCodec
from .sharing import SharedVector, ZeroShareSource, pred, succ
from .transport import Links

__all__ = ["Engine", "sv_stack", "sv_concat", "batcher_layers"]

_U64 = np.uint64


def sv_stack(parts: Sequence[SharedVector], axis: int = 0) -> SharedVector:
    return SharedVector(np.stack([p.a for p in parts], axis=axis),
                        np.stack([p.b for p in parts], axis=axis))


def sv_concat(parts: Sequence[SharedVector], axis: int = 0) -> SharedVector:
    return SharedVector(np.concatenate([p.a for p in parts], axis=axis),
                        np.concatenate([p.b for p in parts], axis=axis))


_layer_cache: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}


def batcher_layers(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Compare-exchange layers of Batcher's odd-even merge sort (n = 2^m).

    Each layer is a pair of index arrays (lo, hi); all exchanges within a
    layer are data-independent and can run in one vectorized batch.
    """
    if n in _layer_cache:
        return _layer_cache[n]
    if n & (n - 1):
        raise ParameterError("sorting network size must be a power of two")
    layers = []
    p = 1
    while p < n:
        k = p
        while k >= 1:
            lo = []
            j = k % p
            while j <= n - 1 - k:
                for i in range(min(k, n - j - k)):
                    if (i + j) // (p * 2) == (i + j + k) // (p * 2):
                        lo.append(i + j)
                j += 2 * k
            idx = np.asarray(lo, dtype=np.intp)
            layers.append((idx, idx + k))
            k //= 2
        p *= 2
    _layer_cache[n] = layers
    return layers


class Engine:
    """One party's view of the three-party computation.

    Single-threaded within a party; an instance must not be shared
    between concurrent protocol runs (its randomness counters advance in
    lockstep with the peers').
    """

    def __init__(self, links: Links, codec: FixedPointCodec, seed: int):
        self.links = links
        self.codec = codec
        self.ring = codec.ring
        self.party = links.party
        self.f = codec.frac_bits
        self.k = codec.bits
        self._seed = seed
        self._ready = False

    # --- one-time setup ---------------------------------------------------

    def setup(self) -> None:
        """Exchange pairwise PRF seeds and derive correlated-randomness streams.

        Each party draws the seed for the edge it shares with its successor
        and sends it along the ring; counter-mode expansion does the rest.
        """
        gen = generator_from_key(derive_key(self._seed, "edge-seed", self.party))
        seed_next = gen.bytes(16)
        self.links.send(succ(self.party), np.frombuffer(seed_next, dtype=_U64))
        seed_prev = self.links.recv(pred(self.party)).astype("<u8").tobytes()
        self._zero = ZeroShareSource(derive_key(seed_next, "zero-arith"),
                                     derive_key(seed_prev, "zero-arith"), self.ring)
        self._zero_bits = ZeroShareSource(derive_key(seed_next, "zero-bits"),
                                          derive_key(seed_prev, "zero-bits"))
        # Jointly-random words: the value in additive/XOR slot j comes from
        # the edge between parties j-1 and j, so each party can fill both of
        # its slots locally while no single party sees all three streams.
        self._rand_a = PrfStream(derive_key(seed_prev, "rand-words"))
        self._rand_b = PrfStream(derive_key(seed_next, "rand-words"))
        self._ready = True

    def _require_setup(self) -> None:
        if not self._ready:
            raise ProtocolError("engine used before setup()")

    # --- local linear algebra on shares ------------------------------------

    def zero_sv(self, shape) -> SharedVector:
        z = np.zeros(shape, dtype=_U64)
        return SharedVector(z, z.copy())

    def public(self, values) -> SharedVector:
        """Sharing of publicly known raw ring values (slot 1 carries them)."""
        values = self.ring.wrap_array(np.asarray(values, dtype=_U64))
        zeros = np.zeros_like(values)
        if self.party == 1:
            return SharedVector(values.copy(), zeros)
        if self.party == 3:
            return SharedVector(zeros, values.copy())
        return SharedVector(zeros, zeros.copy())

    def add(self, x: SharedVector, y: SharedVector) -> SharedVector:
        return SharedVector(self.ring.wrap_array(x.a + y.a), self.ring.wrap_array(x.b + y.b))

    def sub(self, x: SharedVector, y: SharedVector) -> SharedVector:
        return SharedVector(self.ring.wrap_array(x.a - y.a), self.ring.wrap_array(x.b - y.b))

    def neg(self, x: SharedVector) -> SharedVector:
        return SharedVector(self.ring.wrap_array(-x.a), self.ring.wrap_array(-x.b))

    def add_public(self, x: SharedVector, const) -> SharedVector:
        const = self.ring.wrap_array(np.asarray(const, dtype=_U64))
        a, b = x.a, x.b
        if self.party == 1:
            a = self.ring.wrap_array(a + const)
        elif self.party == 3:
            b = self.ring.wrap_array(b + const)
        return SharedVector(a.copy() if a is x.a else a, b.copy() if b is x.b else b)

    def mul_public(self, x: SharedVector, const) -> SharedVector:
        const = self.ring.wrap_array(np.asarray(const, dtype=_U64))
        return SharedVector(self.ring.wrap_array(x.a * const),
                            self.ring.wrap_array(x.b * const))

    def mul_public_fp(self, x: SharedVector, real: float, frac: int | None = None) -> SharedVector:
        """Multiply by a public real constant (encode, multiply, truncate)."""
        frac = self.f if frac is None else frac
        c = round(real * (1 << frac))
        return self.trunc(self.mul_public(x, self.ring.wrap(c)), frac)

    def sum_local(self, x: SharedVector, axis=-1) -> SharedVector:
        """Sum along an axis; free (the dot-with-public-ones idiom)."""
        return SharedVector(self.ring.wrap_array(x.a.sum(axis=axis, dtype=_U64)),
                            self.ring.wrap_array(x.b.sum(axis=axis, dtype=_U64)))

    def trunc(self, x: SharedVector, bits: int | None = None) -> SharedVector:
        """Oblivious arithmetic right shift (exact floor semantics).

        Purely share-local shifting is unsound with three additive slots
        (the integer sum wraps the ring a data-independent-but-random
        number of times, leaving a huge 2^(k-s) error term), so the value
        is recomposed from its binary form instead: drop the low bits,
        reassemble the rest, and sign-extend with the top bit. Exact, at
        the price of one binary-adder evaluation.
        """
        s = self.f if bits is None else bits
        if s <= 0:
            return x.copy()
        k = self.k
        words = self._bit_compose_words(x, k)
        one = _U64(1)
        a = np.stack([(words.a >> _U64(j)) & one for j in range(s, k)])
        b = np.stack([(words.b >> _U64(j)) & one for j in range(s, k)])
        hi_bits = self._b2a(SharedVector(a, b))  # (k-s, ...) raw bits
        weights = self.ring.wrap_array(one << np.arange(k - s, dtype=_U64))
        weights = weights.reshape((k - s,) + (1,) * x.a.ndim)
        out = SharedVector(
            self.ring.wrap_array((hi_bits.a * weights).sum(axis=0, dtype=_U64)),
            self.ring.wrap_array((hi_bits.b * weights).sum(axis=0, dtype=_U64)),
        )
        # sign extension: subtract 2^(k-s) where the sign bit is set
        sign = hi_bits[k - s - 1]
        ext = self.ring.wrap(-(1 << (k - s)))
        return self.add(out, self.mul_public(sign, ext))

    # --- resharing core -----------------------------------------------------

    def _reshare(self, z_local: np.ndarray) -> SharedVector:
        self._require_setup()
        z = self.ring.wrap_array(z_local + self._zero.next_block(z_local.size).reshape(z_local.shape))
        self.links.send(pred(self.party), z)
        z_next = self.links.recv(succ(self.party)).reshape(z_local.shape)
        return SharedVector(z, self.ring.wrap_array(z_next))

    def _reshare_bits(self, z_local: np.ndarray) -> SharedVector:
        self._require_setup()
        z = z_local ^ self._zero_bits.next_xor_block(z_local.size).reshape(z_local.shape)
        self.links.send(pred(self.party), z)
        z_next = self.links.recv(succ(self.party)).reshape(z_local.shape)
        return SharedVector(z, z_next)

    # --- multiplication and inner products ----------------------------------

    def mul_raw(self, x: SharedVector, y: SharedVector) -> SharedVector:
        """Product of two sharings; exact over raw ring integers."""
        z = x.a * y.a + x.a * y.b + x.b * y.a
        return self._reshare(z)

    def mul(self, x: SharedVector, y: SharedVector) -> SharedVector:
        """Fixed-point product: multiply then restore f fractional bits."""
        return self.trunc(self.mul_raw(x, y))

    def dot(self, x: SharedVector, y: SharedVector, fp: bool = False) -> SharedVector:
        """Inner product along the last axis: one ring element reshared per
        output element no matter the vector length."""
        z = (x.a * y.a + x.a * y.b + x.b * y.a).sum(axis=-1, dtype=_U64)
        out = self._reshare(self.ring.wrap_array(z))
        return self.trunc(out) if fp else out

    def dot_rows(self, x: SharedVector, y: SharedVector, fp: bool = False) -> SharedVector:
        """All pairwise inner products of the rows of x (R,N) and y (S,N)."""
        ya_t, yb_t = y.a.T, y.b.T
        z = x.a @ ya_t + x.a @ yb_t + x.b @ ya_t
        out = self._reshare(self.ring.wrap_array(z))
        return self.trunc(out) if fp else out

    # --- packed binary circuits ----------------------------------------------

    def _and_bits(self, x: SharedVector, y: SharedVector) -> SharedVector:
        z = (x.a & y.a) ^ (x.a & y.b) ^ (x.b & y.a)
        return self._reshare_bits(z)

    @staticmethod
    def _xor(x: SharedVector, y: SharedVector) -> SharedVector:
        return SharedVector(x.a ^ y.a, x.b ^ y.b)

    @staticmethod
    def _shl(x: SharedVector, s: int) -> SharedVector:
        sh = _U64(s)
        return SharedVector(x.a << sh, x.b << sh)

    def _slot_operands(self, sv: SharedVector) -> list[SharedVector]:
        """Reinterpret this party's pair as three globally consistent
        single-slot sharings (slot j nonzero only for its two holders)."""
        z = np.zeros_like(sv.a)
        ops = []
        for j in (1, 2, 3):
            a = sv.a if j == self.party else z
            b = sv.b if j == succ(self.party) else z
            ops.append(SharedVector(a, b))
        return ops

    def _add2_bits(self, x: SharedVector, y: SharedVector, width: int) -> SharedVector:
        """Bit pattern of x + y on packed words (low `width` bits valid)."""
        s0 = self._xor(x, y)
        g = self._and_bits(x, y)
        p = s0
        sh = 1
        while sh < width:
            both = self._and_bits(sv_concat([p.ravel(), p.ravel()]),
                                  sv_concat([self._shl(g, sh).ravel(), self._shl(p, sh).ravel()]))
            half = p.size
            t_g = SharedVector(both.a[:half].reshape(p.shape), both.b[:half].reshape(p.shape))
            t_p = SharedVector(both.a[half:].reshape(p.shape), both.b[half:].reshape(p.shape))
            g = self._xor(g, t_g)
            p = t_p
            sh *= 2
        return self._xor(s0, self._shl(g, 1))

    def _sum3_bits(self, ops: Sequence[SharedVector], width: int) -> SharedVector:
        """Bit pattern of the sum of three packed-word sharings."""
        b1, b2, b3 = ops
        s = self._xor(self._xor(b1, b2), b3)
        # carry = maj(b1,b2,b3) = (b1 & b2) ^ ((b1 ^ b2) & b3)
        both = self._and_bits(sv_concat([b1.ravel(), self._xor(b1, b2).ravel()]),
                              sv_concat([b2.ravel(), b3.ravel()]))
        half = b1.size
        c = SharedVector((both.a[:half] ^ both.a[half:]).reshape(b1.shape),
                         (both.b[:half] ^ both.b[half:]).reshape(b1.shape))
        return self._add2_bits(s, self._shl(c, 1), width)

    def _bit_compose_words(self, x: SharedVector, width: int) -> SharedVector:
        """Packed bit pattern (XOR sharing) of the value of an arithmetic sharing."""
        return self._sum3_bits(self._slot_operands(x), width)

    def _b2a(self, bits: SharedVector) -> SharedVector:
        """Arithmetic sharing of XOR-shared single bits (0/1 word arrays)."""
        u1, u2, u3 = self._slot_operands(bits)

        def xor_arith(p: SharedVector, q: SharedVector) -> SharedVector:
            prod = self.mul_raw(p, q)
            return self.sub(self.add(p, q), self.mul_public(prod, np.uint64(2)))

        return xor_arith(xor_arith(u1, u2), u3)

    # --- comparison, decomposition, one-hot ----------------------------------

    def msb(self, x: SharedVector) -> SharedVector:
        """Raw-bit sharing of the sign bit of x (two's complement)."""
        words = self._bit_compose_words(x, self.k)
        j = _U64(self.k - 1)
        one = _U64(1)
        sign = SharedVector((words.a >> j) & one, (words.b >> j) & one)
        return self._b2a(sign)

    def lt(self, x: SharedVector, y: SharedVector) -> SharedVector:
        """Strict signed comparison bit: 1 where x < y.

        Valid while |x - y| stays below 2^(k-1).
        """
        return self.msb(self.sub(x, y))

    def bit_decompose_low(self, x: SharedVector, nbits: int) -> SharedVector:
        """Arithmetic sharings of the low `nbits` bits of x (raw 0/1 values),
        stacked on a new leading axis."""
        words = self._bit_compose_words(x, nbits)
        one = _U64(1)
        a = np.stack([(words.a >> _U64(j)) & one for j in range(nbits)])
        b = np.stack([(words.b >> _U64(j)) & one for j in range(nbits)])
        return self._b2a(SharedVector(a, b))

    def onehot(self, x: SharedVector, domain: int) -> SharedVector:
        """Exact one-hot encoding over {0..domain-1} along a new last axis.

        x must hold raw integers inside the domain; the output indicators
        are raw 0/1 ring values (exactly one per element equals 1).
        """
        if domain < 2:
            raise ParameterError("one-hot domain must be at least 2")
        m = (domain - 1).bit_length()
        bits = self.bit_decompose_low(x, m)  # (m, ...) raw bits
        bit0 = bits[0]
        ones = np.ones_like(x.a)
        oh = sv_stack([self.add_public(self.neg(bit0), ones), bit0], axis=-1)
        for j in range(1, m):
            bj = bits[j]
            rep = sv_stack([bj] * oh.shape[-1], axis=-1)
            hi = self.mul_raw(oh, rep)
            oh = sv_concat([self.sub(oh, hi), hi], axis=-1)
        return oh[..., :domain]

    def eq(self, x: SharedVector, value: int, domain: int) -> SharedVector:
        """Indicator bit for x == value over a small public domain."""
        if not 0 <= value < domain:
            raise ParameterError(f"eq target {value} outside domain [0, {domain})")
        return self.onehot(x, domain)[..., value]

    # --- division -------------------------------------------------------------

    def div(self, a: SharedVector, b: SharedVector, max_b: int) -> SharedVector:
        """Fixed-point quotient a / b for a raw integer divisor b in [1, max_b].

        Newton-Raphson reciprocal with a fixed iteration count after an
        oblivious power-of-two normalization of the divisor. When b = 0 the
        result degrades gracefully to 0 (the empty-bin convention upstream);
        relative error is within 2^(-f+2) for b >= 1.
        """
        g = min(28, (self.k - 4) // 2)
        nbits = max(int(max_b).bit_length(), 1)
        if nbits > self.f - 1 or nbits > g:
            raise ParameterError(
                f"divisor bound {max_b} too large for {self.f} fractional bits"
            )
        bits = self.bit_decompose_low(b, nbits)
        ones = np.ones_like(b.a)
        comp = [self.add_public(self.neg(bits[i]), ones) for i in range(nbits)]
        suffix = [None] * nbits  # suffix[i] = prod_{j>=i} (1 - bit_j)
        suffix[nbits - 1] = comp[nbits - 1]
        for i in range(nbits - 2, -1, -1):
            suffix[i] = self.mul_raw(suffix[i + 1], comp[i])
        # One-hot of the top set bit position m: 2^m <= b < 2^(m+1).
        v_g = self.zero_sv(b.shape)
        v_f = self.zero_sv(b.shape)
        for i in range(nbits):
            upper = suffix[i + 1] if i + 1 < nbits else None
            z_i = self.sub(upper, suffix[i]) if upper is not None else \
                self.add_public(self.neg(suffix[i]), ones)
            v_g = self.add(v_g, self.mul_public(z_i, _U64(1 << (g - 1 - i))))
            v_f = self.add(v_f, self.mul_public(z_i, _U64(1 << (self.f - 1 - i))))
        # b_hat = b * 2^(g-1-m) encodes b / 2^(m+1) in [0.5, 1) at g frac bits.
        b_hat = self.mul_raw(b, v_g)
        # w0 = 48/17 - 32/17 * b_hat, then 3 NR refinements of 1/b_hat.
        w = self.add_public(self.neg(self.mul_public_fp(b_hat, 32 / 17, g)),
                            _U64(round(48 / 17 * (1 << g))))
        two_g = _U64(2 << g)
        for _ in range(3):
            e = self.trunc(self.mul_raw(b_hat, w), g)
            w = self.trunc(self.mul_raw(w, self.add_public(self.neg(e), two_g)), g)
        # a / b = (a * (1/b_hat)) * 2^(-m-1)
        r1 = self.trunc(self.mul_raw(a, w), g)
        return self.trunc(self.mul_raw(r1, v_f), self.f)

    # --- oblivious sorting ------------------------------------------------------

    def sort_rows(self, m: SharedVector) -> SharedVector:
        """Sort each row of a (rows, n) sharing ascending, obliviously.

        Batcher odd-even merge network of vectorized compare-exchanges;
        the access pattern is fixed, so nothing about the data leaks.
        Rows are padded with a public sentinel above the fixed-point range.
        """
        rows, n = m.shape[-2], m.shape[-1]
        n2 = 1 << max(1, (n - 1).bit_length())
        if n2 > n:
            pad = self.public(np.full((rows, n2 - n), 1 << (self.k - 2), dtype=_U64))
            m = sv_concat([m, pad], axis=-1)
        else:
            m = m.copy()
        for lo, hi in batcher_layers(n2):
            a = m[..., lo]
            b = m[..., hi]
            swap = self.lt(b, a)
            t = self.mul_raw(swap, self.sub(b, a))
            m[..., lo] = self.add(a, t)
            m[..., hi] = self.sub(b, t)
        return m[..., :n]

    def sort(self, v: SharedVector) -> SharedVector:
        """Ascending oblivious sort of a 1-D sharing."""
        return self.sort_rows(v.reshape(1, -1)).reshape(-1)

    # --- secure randomness --------------------------------------------------------

    def _joint_random_words(self, n: int) -> SharedVector:
        """XOR sharing of jointly random words no single party knows."""
        self._require_setup()
        return SharedVector(self._rand_a.words(n), self._rand_b.words(n))

    def rand_unit(self, shape) -> SharedVector:
        """Uniform fixed-point values in [0, 1): m / 2^f with m jointly random."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        words = self._joint_random_words(n)
        one = _U64(1)
        a = np.stack([(words.a >> _U64(j)) & one for j in range(self.f)])
        b = np.stack([(words.b >> _U64(j)) & one for j in range(self.f)])
        bits = self._b2a(SharedVector(a, b))  # (f, n) raw bits
        weights = (_U64(1) << np.arange(self.f, dtype=_U64))[:, None]
        return SharedVector(
            self.ring.wrap_array((bits.a * weights).sum(axis=0, dtype=_U64)).reshape(shape),
            self.ring.wrap_array((bits.b * weights).sum(axis=0, dtype=_U64)).reshape(shape),
        )

    def gauss_vector(self, n: int) -> SharedVector:
        """Approximate standard normal noise: 12 uniform draws minus 6.

        The sum-of-uniforms shape bounds the support to [-6, 6]; callers
        treating it as Gaussian accept that approximation. Large requests
        are processed in blocks to cap the bit-conversion working set.
        """
        if n < 1:
            raise ParameterError("gauss_vector needs n >= 1")
        block = 16384
        parts = []
        for start in range(0, n, block):
            m = min(block, n - start)
            u = self.rand_unit((12, m))
            total = self.sum_local(u, axis=0)
            parts.append(self.add_public(total, self.ring.wrap(-6 << self.f)))
        return parts[0] if len(parts) == 1 else sv_concat(parts)

    # --- reveal ----------------------------------------------------------------

    def reveal(self, x: SharedVector, to: int | None = None) -> np.ndarray | None:
        """Open a sharing: to everyone (default) or to one designated party.

        Only the designated party receives anything; everyone else's view
        is unchanged. Returns the plaintext raw ring values (or None).
        """
        if to is None:
            self.links.send(pred(self.party), x.b)
            third = self.links.recv(succ(self.party)).reshape(x.shape)
            return self.ring.wrap_array(x.a + x.b + third)
        if self.party == succ(to):
            self.links.send(to, x.b)
            return None
        if self.party == to:
            third = self.links.recv(succ(to)).reshape(x.shape)
            return self.ring.wrap_array(x.a + x.b + third)
        return None

    def reveal_fp(self, x: SharedVector, to: int | None = None) -> np.ndarray | None:
        raw = self.reveal(x, to)
        return None if raw is None else self.codec.decode_array(raw)
