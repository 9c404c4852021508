"""Brute-force transition detector: explicit per-sample state machine.

Independent of the vectorized implementation: runs of equal values are
walked sample by sample, extrema are classified with plain comparisons,
and the zero-crossing search is a while loop.
"""


def oracle_transitions(series, dt, y_b, t0=0.0):
    s = list(map(float, series))
    n = len(s)

    # runs of equal samples, each as (first index, value)
    runs = []
    k = 0
    while k < n:
        j = k
        while j + 1 < n and s[j + 1] == s[k]:
            j += 1
        runs.append((k, s[k]))
        k = j + 1

    # interior extrema with plateau -> first sample; arm against thresholds
    armed = []
    for r in range(1, len(runs) - 1):
        i0, v = runs[r]
        before = runs[r - 1][1]
        after = runs[r + 1][1]
        if v > before and v > after and v > y_b:
            armed.append((i0, "max"))
        elif v < before and v < after and v < -y_b:
            armed.append((i0, "min"))

    trans = []
    lobes = []
    last = None
    for i0, kind in armed:
        if last is not None and kind != last[1]:
            m = last[0]
            if kind == "min":
                while s[m] >= 0.0:
                    m += 1
                lobes.append("left")
            else:
                while s[m] <= 0.0:
                    m += 1
                lobes.append("right")
            trans.append(m)
        last = (i0, kind)

    times = [t0 + dt * m for m in trans]
    records = [(lobes[r], times[r], times[r + 1])
               for r in range(len(times) - 1)]
    return times, records


def oracle_series(rng, n=None, quantize=False):
    """Random smooth-ish series with occasional plateaus and exact zeros."""
    import numpy as np
    n = n or int(rng.integers(200, 1500))
    kind = rng.integers(3)
    if kind == 0:
        raw = np.cumsum(rng.standard_normal(n))
        raw = raw - raw.mean()
        raw /= max(1e-9, np.max(np.abs(raw)))
    elif kind == 1:
        t = np.arange(n) * 0.05
        raw = (np.sin(2 * np.pi * t / rng.uniform(5, 40))
               + 0.5 * np.sin(2 * np.pi * t / rng.uniform(1, 5) + rng.uniform(0, 6)))
        raw *= rng.uniform(0.2, 1.2)
    else:
        raw = rng.standard_normal(n)
        k = int(rng.integers(5, 40)) | 1
        raw = np.convolve(raw, np.ones(k) / k, mode="same")
        raw /= max(1e-9, np.max(np.abs(raw)))
    if quantize:
        raw = np.round(raw, 1)  # plateaus, exact zeros, exact threshold hits
    return raw
