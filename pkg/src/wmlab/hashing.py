"""64-bit mixing hash and seed-splitting utilities.

Everything random in the lab bottoms out either in numpy bit generators or in
the splitmix64 finalizer below, so that every artifact is reproducible from
integer seeds alone. The exact pipeline matters: golden tests re-derive it by
hand, and the toy model promises bit-identical output across platforms.

mix64 is one splitmix64 step (Steele, Lea & Flood's constants):

    z = (z + 0x9E3779B97F4A7C15) mod 2^64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    return z ^ (z >> 31)
"""

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """One splitmix64 step; maps any 64-bit value to a well-mixed one."""
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & MASK64
    return (z ^ (z >> 31)) & MASK64


def derive_seed(master: int, *parts: int | str) -> int:
    """Derive an independent child seed from a master seed and a label path.

    The split function absorbs each part into a running mix64 chain: integers
    are masked to 64 bits and XOR-folded, strings absorb their length followed
    by each UTF-8 byte. Distinct label paths yield independent streams, so
    enlarging one experiment stage never perturbs another.
    """
    h = mix64(master & MASK64)
    for part in parts:
        if isinstance(part, str):
            h = mix64(h ^ len(part))
            for b in part.encode("utf-8"):
                h = mix64(h ^ b)
        else:
            h = mix64(h ^ (int(part) & MASK64))
    return h
