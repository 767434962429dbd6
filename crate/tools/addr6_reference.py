#!/usr/bin/env python3
"""Reference IID decoder modeled on addr6 (SI6 ipv6toolkit) heuristics.

Writes crates/core/tests/fixtures/addr6_reference.tsv: a seeded 200-address
corpus with the label this decoder assigns. Subnet-router anycast (IID 0) is
reported separately, as the analysis pipeline does on top of addr6.

Usage: python3 tools/addr6_reference.py
"""

import ipaddress
import random
from pathlib import Path

SERVICE_PORTS = {21, 22, 23, 25, 53, 80, 110, 123, 143, 161, 179, 443, 445,
                 993, 995, 3306, 3389, 5060, 8080, 8443}

OUT = Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/addr6_reference.tsv"


def words(iid):
    return [(iid >> s) & 0xFFFF for s in (48, 32, 16, 0)]


def as_decimal(word):
    s = f"{word:x}"
    return int(s) if s.isdigit() else None


def is_port(word):
    if word in SERVICE_PORTS:
        return True
    d = as_decimal(word)
    return d is not None and d in SERVICE_PORTS


def decode(addr):
    iid = int(ipaddress.IPv6Address(addr)) & ((1 << 64) - 1)
    w = words(iid)
    b = iid.to_bytes(8, "big")
    if iid == 0:
        return "subnet_anycast"
    if b[3] == 0xFF and b[4] == 0xFE:
        return "ieee_derived"
    if (iid >> 32) & 0xFDFFFFFF == 0x00005EFE:
        return "isatap"
    # Port in the last word, or in the second-to-last word followed by zero.
    if w[0] == w[1] == w[2] == 0 and w[3] != 0 and is_port(w[3]):
        return "embedded_port"
    if w[0] == w[1] == 0 and w[3] == 0 and w[2] != 0 and is_port(w[2]):
        return "embedded_port"
    if w[0] == w[1] == 0 and (w[2] & 0xFF00) != 0:
        return "embedded_ipv4"
    if w[0] == w[1] == w[2] == 0:
        return "low_byte"
    if w[0] != 0 and all(x <= 0xFF for x in w):
        return "embedded_ipv4"
    if w[0] != 0 and all(as_decimal(x) is not None and as_decimal(x) <= 255 for x in w):
        return "embedded_ipv4"
    nonzero = [x for x in b if x]
    if len(nonzero) >= 2 and len(set(nonzero)) == 1:
        return "pattern_bytes"
    if len(set(w)) == 1 and w[0] != 0:
        return "pattern_bytes"
    return "randomized"


def corpus(rng):
    net = 0x20010DB8 << 96
    out = []

    def add(iid, note):
        out.append((str(ipaddress.IPv6Address(net | (rng.randrange(1 << 16) << 64) | iid)), note))

    fixed = [
        (0, "zero iid"), (1, "::1"), (0x443, "port 443 written decimal"),
        (0x1BB, "port 443 in hex"), (0x50, "port 80 in hex"), (0x80, "port 80 decimal"),
        (0xC0000001, "::192.0.0.1"), (0x0192016800010001, "::192:168:1:1"),
        (0x00005EFEC0000201, "isatap"), (0x02005EFE0A000001, "isatap u/l"),
        (0x021122FFFE334455, "eui-64"), (0x1111111111111111, "repeated nibble"),
        (0x0000000000AAAAAA, "three repeated bytes"), (0x00AB00AB00AB00AB, "byte every other"),
        (0x0000000000500000, "port 80 then zero word"), (0x0000000001BB0000, "port 443 hex then zero"),
        (0xABCDABCDABCDABCD, "repeated word"), (0x0001000200030004, "small words"),
        (0x0000000000000100, "low byte 0x100"), (0x000000000000FFFF, "low 16 bits"),
    ]
    for iid, note in fixed:
        add(iid, note)
    gens = [
        (lambda: rng.randrange(1, 256), "low byte"),
        (lambda: rng.randrange(256, 1 << 16), "low 16 bit"),
        (lambda: rng.getrandbits(64), "random"),
        (lambda: rng.getrandbits(32) | 0x01000000, "ipv4 32-bit"),
        (lambda: (rng.getrandbits(24) << 40) | 0xFFFE000000 | rng.getrandbits(24), "eui-64"),
        (lambda: int("".join(f"{rng.randrange(1, 256):04d}" for _ in range(4)), 16), "ipv4 decimal words"),
        (lambda: int(f"{rng.choice(sorted(SERVICE_PORTS)):04d}", 16), "decimal port"),
        (lambda: rng.choice(sorted(SERVICE_PORTS)), "hex port"),
        (lambda: int.from_bytes(bytes([0] * 5 + [rng.randrange(1, 256)] * 3), "big"), "pattern bytes"),
    ]
    weights = [30, 20, 60, 15, 8, 8, 8, 8, 3]
    while len(out) < 200:
        g, note = rng.choices(gens, weights)[0]
        add(g(), note)
    return out


def main():
    rng = random.Random(20240101)
    rows = corpus(rng)
    with OUT.open("w") as f:
        f.write("# address\treference_label\tnote\n")
        for addr, note in rows:
            f.write(f"{addr}\t{decode(addr)}\t{note}\n")
    print(f"wrote {len(rows)} rows to {OUT}")


if __name__ == "__main__":
    main()
