"""Generate NIST SP 800-22 test vectors with numpy/scipy.

Writes crates/core/tests/fixtures/nist_vectors.json. Sequences mix uniform
bits, biased bits and structured patterns so both pass and fail regions are
covered.
"""
import json
import math
import pathlib

import numpy as np
from scipy.special import erfc
from scipy.stats import norm


def frequency(bits):
    n = len(bits)
    s = np.sum(2 * bits - 1)
    return float(erfc(abs(s) / math.sqrt(n) / math.sqrt(2)))


def runs(bits):
    n = len(bits)
    pi = bits.mean()
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return None
    v = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    return float(erfc(abs(v - 2 * n * pi * (1 - pi)) / (2 * math.sqrt(2 * n) * pi * (1 - pi))))


def fft(bits):
    n = len(bits)
    x = 2.0 * bits - 1.0
    m = np.abs(np.fft.fft(x))[: n // 2]
    t = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * n / 2
    n1 = int(np.count_nonzero(m < t))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4)
    return float(erfc(abs(d) / math.sqrt(2)))


def cusum(bits, forward):
    n = len(bits)
    x = 2 * bits.astype(np.int64) - 1
    if not forward:
        x = x[::-1]
    z = int(np.max(np.abs(np.cumsum(x))))
    sq = math.sqrt(n)
    s1 = 0.0
    for k in range(int((-n / z + 1) / 4), int(math.floor((n / z - 1) / 4)) + 1):
        s1 += norm.cdf((4 * k + 1) * z / sq) - norm.cdf((4 * k - 1) * z / sq)
    s2 = 0.0
    for k in range(int((-n / z - 3) / 4), int(math.floor((n / z - 1) / 4)) + 1):
        s2 += norm.cdf((4 * k + 3) * z / sq) - norm.cdf((4 * k + 1) * z / sq)
    return float(1 - s1 + s2)


def main():
    rng = np.random.default_rng(20240601)
    vectors = []
    for i in range(50):
        n = int(rng.integers(100, 4096))
        kind = i % 5
        if kind == 0:
            bits = rng.integers(0, 2, n)
        elif kind == 1:
            bits = (rng.random(n) < 0.53).astype(np.int64)
        elif kind == 2:
            period = int(rng.integers(2, 16))
            bits = (np.arange(n) % period < period // 2).astype(np.int64)
        elif kind == 3:
            bits = rng.integers(0, 2, n)
            bits[: n // 3] = 0
        else:
            bits = (rng.random(n) < 0.5).astype(np.int64)
            bits[::7] = 1
        bits = bits.astype(np.int64)
        vectors.append(
            {
                "bits": "".join(map(str, bits.tolist())),
                "frequency": frequency(bits),
                "runs": runs(bits),
                "fft": fft(bits),
                "cusum_forward": cusum(bits, True),
                "cusum_backward": cusum(bits, False),
            }
        )
    out = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/nist_vectors.json"
    out.write_text(json.dumps(vectors, indent=1) + "\n")


if __name__ == "__main__":
    main()
