"""Independent reference values for the C++ tests.

Pure-Python MT19937-64, Box-Muller, SplitMix64 and argsort, plus an
mpmath evaluation of -log softmax. Run from the repository root:

    python3 tests/oracles/gen_oracles.py

Prints the frozen values used in the test sources and (re)writes the IDX
fixtures under tests/fixtures/.
"""
import gzip
import hashlib
import math
import struct

import mpmath

MASK = (1 << 64) - 1


class MT64:
    def __init__(self, seed):
        self.mt = [0] * 312
        self.mt[0] = seed & MASK
        for i in range(1, 312):
            self.mt[i] = (6364136223846793005 * (self.mt[i - 1] ^ (self.mt[i - 1] >> 62)) + i) & MASK
        self.idx = 312

    def _twist(self):
        upper, lower = 0xFFFFFFFF80000000, 0x7FFFFFFF
        for i in range(312):
            x = (self.mt[i] & upper) | (self.mt[(i + 1) % 312] & lower)
            xa = x >> 1
            if x & 1:
                xa ^= 0xB5026F5AA96619E9
            self.mt[i] = self.mt[(i + 156) % 312] ^ xa
        self.idx = 0

    def next(self):
        if self.idx >= 312:
            self._twist()
        y = self.mt[self.idx]
        self.idx += 1
        y ^= (y >> 29) & 0x5555555555555555
        y ^= (y << 17) & 0x71D67FFFEDA60000
        y ^= (y << 37) & 0xFFF7EEE000000000
        y ^= y >> 43
        return y & MASK


class Rng:
    def __init__(self, seed):
        self.e = MT64(seed)
        self.spare = None

    def uniform(self):
        return (self.e.next() >> 11) * 2.0 ** -53

    def normal(self):
        if self.spare is not None:
            v, self.spare = self.spare, None
            return v
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        th = 2.0 * math.pi * u2
        self.spare = r * math.sin(th)
        return r * math.cos(th)

    def below(self, n):
        threshold = ((1 << 64) - n) % n
        while True:
            x = self.e.next()
            if x >= threshold:
                return x % n


def derive_seed(base, stream):
    z = (base + 0x9E3779B97F4A7C15 * (stream + 1)) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def main():
    e = MT64(5489)
    for _ in range(9999):
        e.next()
    print("mt19937_64 default seed, 10000th:", e.next())

    r = Rng(42)
    print("Rng(42).next x3:", [r.e.next() for _ in range(3)])
    r = Rng(42)
    print("Rng(42).normal x4:", ["%.17g" % r.normal() for _ in range(4)])
    r = Rng(1)
    print("Rng(1).below(10) x8:", [r.below(10) for _ in range(8)])
    r = Rng(3)
    items = list(range(10))
    for i in range(len(items), 1, -1):
        j = r.below(i)
        items[i - 1], items[j] = items[j], items[i - 1]
    print("shuffle(0..9, Rng(3)):", items)
    print("derive_seed(7, 0..2):", [derive_seed(7, s) for s in range(3)])

    r = Rng(42)
    key = [r.normal() for _ in range(784)]
    perm = sorted(range(784), key=lambda i: (key[i], i))
    print("keygen(42, 784) perm[:12]:", perm[:12])
    print("keygen(42, 784) perm sha256:", hashlib.sha256(",".join(map(str, perm)).encode()).hexdigest())
    print("PKEY bytes for seed 42 dim 784:", (b"PKEY" + struct.pack(">IIQ", 1, 784, 42)).hex())

    mpmath.mp.dps = 50
    logits = [0.3, -1.2, 2.5, 0.0, 1.1]
    for c in range(5):
        lse = mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(z)) for z in logits))
        print("CE class %d: %s" % (c, mpmath.nstr(lse - mpmath.mpf(logits[c]), 20)))
    print("entropy 784 * 0.5 * ln(2 pi e):", mpmath.nstr(784 * mpmath.log(2 * mpmath.pi * mpmath.e) / 2, 20))

    # IDX fixture: 3 images, pixel (n, i, j) = (n * 97 + i * 28 + j) % 256; labels 3, 1, 4
    n = 3
    img = bytearray(struct.pack(">IIII", 0x803, n, 28, 28))
    for k in range(n):
        for i in range(28):
            for j in range(28):
                img.append((k * 97 + i * 28 + j) % 256)
    lab = bytearray(struct.pack(">II", 0x801, n)) + bytes([3, 1, 4])
    open("tests/fixtures/tiny-images-idx3-ubyte", "wb").write(img)
    open("tests/fixtures/tiny-labels-idx1-ubyte", "wb").write(lab)
    with gzip.GzipFile("tests/fixtures/tiny-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(img)
    with gzip.GzipFile("tests/fixtures/tiny-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(lab)
    print("fixture sha256 images:", hashlib.sha256(img).hexdigest())


if __name__ == "__main__":
    main()
