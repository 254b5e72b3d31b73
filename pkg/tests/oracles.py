"""Independent reference implementations the suite checks the package against.

These deliberately avoid the package's code paths: bit loops instead of
masks, direct transliterations instead of vectorised logic.
"""

from collections import Counter

import numpy as np


def swap_bits_loop(sample_a: int, sample_b: int, k: int) -> int:
    """Bit-by-bit: bits below ``k`` come from ``sample_b``, the rest from ``sample_a``."""
    out = 0
    for bit in range(8):
        src = sample_b if bit < k else sample_a
        out |= ((src >> bit) & 1) << bit
    return out


def lsb_swap_loop(data_a: bytes, data_b: bytes, k: int):
    a2 = bytes(swap_bits_loop(x, y, k) for x, y in zip(data_a, data_b))
    b2 = bytes(swap_bits_loop(y, x, k) for x, y in zip(data_a, data_b))
    return a2, b2


def numeric_grad(fn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn(x)
        flat[i] = orig - step
        down = fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference scaled by the larger gradient's max magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _exact_units(x: float) -> int:
    """``x`` as an exact integer multiple of the smallest subnormal, 2**-1074."""
    num, den = float(x).as_integer_ratio()
    return num * (2**1074 // den)


def plurality_vote_bruteforce(base_id, models, threshold):
    """Thresholded plurality voting written out step by step.

    ``models`` maps model id -> list of (item_id, predicted_class, confidence).
    Ties: base model's class if tied, else largest exactly summed confidence,
    else lowest class index.
    """
    base = models[base_id]
    out = []
    for j in range(len(base)):
        item_id, s_class, s_conf = base[j]
        if s_conf < threshold:
            votes = []
            for model_id in models:
                _, v_class, v_conf = models[model_id][j]
                votes.append((model_id, v_class, v_conf))
            counts = Counter(v[1] for v in votes)
            best = max(counts.values())
            tied = [c for c in counts if counts[c] == best]
            if len(tied) == 1:
                winner = tied[0]
            elif s_class in tied:
                winner = s_class
            else:
                totals = {}
                for c in tied:
                    totals[c] = sum(_exact_units(v[2]) for v in votes if v[1] == c)
                top = max(totals.values())
                winner = min(c for c in tied if totals[c] == top)
            out.append((item_id, winner, "vote"))
        else:
            out.append((item_id, s_class, "base"))
    return out
