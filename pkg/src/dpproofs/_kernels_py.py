"""Pure-numpy versions of the counting kernels.

Used whenever the compiled ``_ckernels`` extension is not importable. Both
implementations must return identical values for identical inputs.
"""

import numpy as np


def element_counts(xs, n):
    return np.bincount(np.asarray(xs, dtype=np.int64), minlength=n).astype(np.int64)


def max_count(xs, n):
    xs = np.asarray(xs, dtype=np.int64)
    if xs.size == 0:
        return 0
    return int(np.bincount(xs, minlength=n).max())


def max_multiplicity(seeds, t, n):
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.size == 0:
        return 0
    counts = np.bincount(np.asarray(t, dtype=np.int64), minlength=n)
    return int(counts[seeds].max())


def binned_collisions(seeds, bin_ids, nbins, t, t2, n):
    """Pair and triple collision counts per bin.

    ``bin_ids[k]`` is the bin of seed ``k``; negative ids are skipped.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    bin_ids = np.asarray(bin_ids, dtype=np.int64)
    ct = np.bincount(np.asarray(t, dtype=np.int64), minlength=n)
    ct2 = np.bincount(np.asarray(t2, dtype=np.int64), minlength=n)
    keep = bin_ids >= 0
    b = bin_ids[keep]
    a = ct[seeds[keep]]
    pair = np.bincount(b, weights=a, minlength=nbins).astype(np.int64)
    triple = np.bincount(b, weights=a * ct2[seeds[keep]], minlength=nbins).astype(np.int64)
    return pair, triple


def tv_to_reference(counts, q, size):
    counts = np.asarray(counts, dtype=np.float64)
    return float(0.5 * np.abs(counts / size - np.asarray(q, dtype=np.float64)).sum())


def tv_two_sample(c1, c2, size1, size2):
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    return float(0.5 * np.abs(c1 / size1 - c2 / size2).sum())
