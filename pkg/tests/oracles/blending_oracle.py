"""Independent apportionment oracle for weighted dataset blending.

Written before the production module and kept frozen. Reimplements the
declared rounding rule (round half to even on the exact rational quota, then
a largest-remainder correction so sizes sum to the pool exactly) using bare
integer arithmetic, so exact agreement with the production code is a
meaningful check rather than the same code run twice.
"""

from fractions import Fraction


def oracle_sizes(weights: list[Fraction], total: int) -> list[int]:
    """Resolved per-dataset sizes for exact rational weights."""
    if not weights:
        raise ValueError("empty weight vector")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    if total < 0:
        raise ValueError("negative pool")

    wsum = sum(weights)
    # quota_i = w_i / wsum * total, kept as an integer pair (num, den)
    quotas = []
    for w in weights:
        num = w.numerator * wsum.denominator * total
        den = w.denominator * wsum.numerator
        quotas.append((num, den))

    sizes = []
    residuals = []  # quota - rounded size, exact
    for num, den in quotas:
        floor = num // den
        rem_num = num - floor * den  # 0 <= rem_num < den
        twice = 2 * rem_num
        if twice > den:
            size = floor + 1
        elif twice < den:
            size = floor
        else:  # exactly half: round to even
            size = floor if floor % 2 == 0 else floor + 1
        sizes.append(size)
        residuals.append(Fraction(num, den) - size)

    delta = total - sum(sizes)
    if delta > 0:
        order = sorted(range(len(sizes)), key=lambda i: (-residuals[i], i))
        for i in order[:delta]:
            sizes[i] += 1
    elif delta < 0:
        order = sorted(range(len(sizes)), key=lambda i: (residuals[i], i))
        for i in order[: -delta]:
            sizes[i] -= 1
    return sizes
