import itertools

import numpy as np
import pytest

from evfact.corpus import ROOT, Sentence

# "Jo failed to leave no trace ." with failed as root; mirrors the shape of
# the running example tree used throughout the analysis tests.
FAILED_TREE = Sentence(
    sent_id="failed-tree",
    tokens=("Jo", "failed", "to", "leave", "no", "trace", "."),
    lemmas=("Jo", "fail", "to", "leave", "no", "trace", "."),
    upos=("PROPN", "VERB", "PART", "VERB", "DET", "NOUN", "PUNCT"),
    heads=(1, ROOT, 3, 1, 5, 3, 3),
    deprels=("nsubj", "root", "mark", "xcomp", "neg", "dobj", "punct"),
)

MINIMAL_CONLLU = """\
# sent_id = jo-left
1\tJo\tJo\tPROPN\t_\t_\t2\tnsubj\t_\t_
2\tleft\tleave\tVERB\t_\t_\t0\troot\t_\t_

"""


@pytest.fixture
def failed_tree():
    return FAILED_TREE


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_embeddings(path, vocab, dim, seed=0):
    """Tiny deterministic embedding file for CLI and pipeline tests."""
    gen = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for token in vocab:
            vec = gen.uniform(-1, 1, dim)
            fh.write(token + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")
    return path


def brute_force_isotonic(preds, golds):
    """Enumerate contiguous-block partitions of the sorted points and keep
    the monotone block-mean fit with the smallest squared error. Tied
    predictions must share a block (the fitted map is a function of the
    prediction). Exact for small n and independent of the
    pool-adjacent-violators code path."""
    order = np.argsort(preds, kind="stable")
    p = np.asarray(preds, dtype=float)[order]
    g = np.asarray(golds, dtype=float)[order]
    n = len(g)
    best, best_sse = None, np.inf
    for cuts in itertools.product([0, 1], repeat=n - 1):
        if any(c and p[i] == p[i + 1] for i, c in enumerate(cuts)):
            continue
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        fit = np.empty(n)
        means = []
        for a, b in zip(bounds, bounds[1:]):
            m = g[a:b].mean()
            means.append(m)
            fit[a:b] = m
        if any(m2 < m1 for m1, m2 in zip(means, means[1:])):
            continue
        sse = float(np.sum((fit - g) ** 2))
        if sse < best_sse:
            best, best_sse = fit, sse
    out = np.empty(n)
    out[order] = best
    return out
