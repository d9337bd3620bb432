"""Built-in correctness battery behind the ``selftest`` command.

Quick versions of the property suites: finite-difference checks for every
encoder topology, the chain-shaped-tree equivalence oracle, subtree
locality, the isotonic-fit projection oracle, the label mapping, miner
exactness on a constructed corpus, and optimizer sanity. Each check
returns (name, passed, detail); the CLI prints one line per check.
"""

from __future__ import annotations

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step, backward, grad_check_report
from .calibration import fit_isotonic
from .corpus import ROOT, Sentence, uds_label
from .lexfeats import ConjugationTable, mine_tense_agreement
from .models import (
    ModelConfig,
    grad_check_adapter,
    init_model,
    l_bilstm_forward,
    t_bilstm_forward,
)

__all__ = ["run_selftest", "isotonic_minimax", "random_tree_sentence", "chain_sentence"]


def isotonic_minimax(golds: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Closed-form least-squares monotone fit: max over lower ranges of
    min over upper ranges of the weighted mean. Independent of the
    pool-adjacent-violators implementation it checks."""
    n = len(golds)
    fitted = np.empty(n)
    for i in range(n):
        best = -np.inf
        for j in range(i + 1):
            worst = np.inf
            for k in range(i, n):
                w = weights[j : k + 1]
                worst = min(worst, float(np.dot(w, golds[j : k + 1]) / np.sum(w)))
            best = max(best, worst)
        fitted[i] = best
    return fitted


def chain_sentence(n: int, sid: str = "chain") -> Sentence:
    """Chain-shaped tree: every token's head is the next token."""
    heads = tuple(t + 1 for t in range(n - 1)) + (ROOT,)
    return Sentence(
        sent_id=sid,
        tokens=tuple(f"w{t}" for t in range(n)),
        lemmas=tuple(f"w{t}" for t in range(n)),
        upos=("X",) * n,
        heads=heads,
        deprels=("dep",) * (n - 1) + ("root",),
    )


def random_tree_sentence(n: int, rng, sid: str = "tree") -> Sentence:
    """Uniform random rooted tree over n tokens."""
    heads = [ROOT] * n
    for t in range(1, n):
        heads[t] = int(rng.integers(0, t))
    order = rng.permutation(n)  # shuffle so the root is not always token 0
    pos = {int(old): int(new) for new, old in enumerate(order)}
    shuffled = [ROOT] * n
    for old, head in enumerate(heads):
        shuffled[pos[old]] = ROOT if head == ROOT else pos[head]
    return Sentence(
        sent_id=sid,
        tokens=tuple(f"w{t}" for t in range(n)),
        lemmas=tuple(f"w{t}" for t in range(n)),
        upos=("X",) * n,
        heads=tuple(shuffled),
        deprels=tuple("root" if h == ROOT else "dep" for h in shuffled),
    )


def subtree(sentence: Sentence, t: int) -> set[int]:
    out = {t}
    frontier = [t]
    while frontier:
        node = frontier.pop()
        for k, head in enumerate(sentence.heads):
            if head == node and k not in out:
                out.add(k)
                frontier.append(k)
    return out


def _check_gradients(dim: int = 4) -> tuple[bool, str]:
    worst = 0.0
    rng = np.random.default_rng(7)
    for topology, layers in (("linear", 1), ("tree", 1), ("hybrid", 1)):
        config = ModelConfig(
            topology=topology, layers=layers, embedding_dim=dim,
            datasets=("check",),
        )
        n = int(rng.integers(3, 6))
        sentence = random_tree_sentence(n, rng, sid=f"g-{topology}{layers}")
        rows = rng.uniform(-1, 1, (n, dim))
        fn, points = grad_check_adapter(
            config, int(rng.integers(0, 10_000)), sentence, rows,
            [(n // 2, 1.0)], "check",
        )
        report = grad_check_report(fn, points, eps=1e-5)
        worst = max(worst, report.max_rel_error)
    return worst < 1e-4, f"max relative error {worst:.2e}"


def _check_chain_equivalence() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    dim = 6
    lin_cfg = ModelConfig(topology="linear", layers=2, embedding_dim=dim,
                          datasets=("check",))
    tree_cfg = ModelConfig(topology="tree", layers=2, embedding_dim=dim,
                           datasets=("check",))
    lin = init_model(lin_cfg, 3)
    tree = init_model(tree_cfg, 4)
    # share weights: up <- fw, down <- bw
    values = {
        name.replace("linear.", "tree.").replace(".fw.", ".up.").replace(".bw.", ".down."): t.values.copy()
        for name, t in lin.named_parameters().items()
        if name.startswith("linear.")
    }
    for name, t in tree.named_parameters().items():
        if name.startswith("tree."):
            t.values[...] = values[name]
    worst = 0.0
    for trial in range(5):
        n = int(rng.integers(2, 8))
        sentence = chain_sentence(n)
        rows_vals = rng.uniform(-1, 1, (n, dim))
        tape = Tape()
        rows = [tape.leaf(rows_vals[t]) for t in range(n)]
        lin_out = l_bilstm_forward(lin.stacks["linear"], tape, rows)
        tree_out = t_bilstm_forward(
            tree.stacks["tree"], tape, rows, sentence, nonlinearity="tanh"
        )
        for t in range(n):
            worst = max(
                worst, float(np.max(np.abs(lin_out[t].values - tree_out[t].values)))
            )
    return worst < 1e-12, f"max absolute divergence {worst:.2e}"


def _check_subtree_locality() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    dim = 5
    config = ModelConfig(topology="tree", layers=1, embedding_dim=dim,
                         datasets=("check",))
    bundle = init_model(config, 5)
    stack = bundle.stacks["tree"]
    for trial in range(5):
        n = int(rng.integers(4, 9))
        sentence = random_tree_sentence(n, rng)
        base = rng.uniform(-1, 1, (n, dim))
        t = int(rng.integers(0, n))
        inside = subtree(sentence, t)
        outside = [k for k in range(n) if k not in inside]
        if not outside:
            continue

        def up_state(vals):
            tape = Tape()
            rows = [tape.leaf(vals[k]) for k in range(n)]
            out = t_bilstm_forward(stack, tape, rows, sentence)
            return out[t].values[: stack.hidden].copy()

        reference = up_state(base)
        perturbed = base.copy()
        perturbed[outside[0]] += 0.37
        if not np.array_equal(reference, up_state(perturbed)):
            return False, f"upward state changed for trial {trial}"
    return True, "upward states bitwise stable under outside perturbation"


def _check_isotonic() -> tuple[bool, str]:
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(40):
        n = int(rng.integers(1, 9))
        preds = rng.uniform(-3, 3, n)
        golds = rng.uniform(-3, 3, n)
        fit = fit_isotonic(preds, golds)
        order = np.argsort(preds, kind="stable")
        xs, ys, ws = [], [], []
        for idx in order:
            if xs and preds[idx] == xs[-1]:
                ws[-1] += 1.0
                ys[-1] += (golds[idx] - ys[-1]) / ws[-1]
            else:
                xs.append(preds[idx])
                ys.append(golds[idx])
                ws.append(1.0)
        oracle = isotonic_minimax(np.array(ys), np.array(ws))
        worst = max(worst, float(np.max(np.abs(oracle - fit.values))))
    return worst < 1e-9, f"max divergence from projection oracle {worst:.2e}"


def _check_label_mapping() -> tuple[bool, str]:
    ok = (
        uds_label(True, 4.0) == 3.0
        and uds_label(False, 4.0) == -3.0
        and uds_label(True, 0.0) == 0.0
    )
    return ok, "happened/confidence mapping is exact"


def _check_miner() -> tuple[bool, str]:
    conj = ConjugationTable(
        {"manage": ("managed", "am managing", "will manage"),
         "hope": ("hoped", "am hoping", "will hope")}
    )
    corpus = [
        "I managed to call her yesterday.",
        "I will manage to call her tomorrow.",
        "I hoped to win the game tomorrow.",
    ]
    table = mine_tense_agreement(corpus, conj, min_count=1)
    ok = table.score("manage") == 1.0 and table.score("hope") == 0.0
    return ok, f"manage={table.score('manage')}, hope={table.score('hope')}"


def _check_adam() -> tuple[bool, str]:
    w = Tensor(np.zeros(1), trainable=True)
    w.grad = np.ones(1)
    state = AdamState()
    adam_step([w], state)
    first = abs(float(w.values[0]) + state.lr) < 1e-9

    # two identical steps decrease a convex quadratic
    w2 = Tensor(np.array([1.0]), trainable=True)
    state2 = AdamState()
    losses = []
    for _ in range(2):
        tape = Tape()
        sq = tape.hadamard(w2, w2)
        loss = tape.sum(sq)
        losses.append(float(loss.values))
        backward(tape, loss)
        adam_step([w2], state2)
    decreasing = losses[0] > float(w2.values[0]) ** 2
    return first and decreasing, "first-step size and quadratic descent hold"


def run_selftest() -> list[tuple[str, bool, str]]:
    checks = [
        ("gradient-correctness", _check_gradients),
        ("chain-tree-equivalence", _check_chain_equivalence),
        ("subtree-locality", _check_subtree_locality),
        ("isotonic-projection", _check_isotonic),
        ("label-mapping", _check_label_mapping),
        ("miner-exactness", _check_miner),
        ("adam-sanity", _check_adam),
    ]
    results = []
    for name, fn in checks:
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, passed, detail))
    return results
