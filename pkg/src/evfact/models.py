"""Sequence and tree biLSTM encoders with a two-layer regression head.

Three encoder topologies over the autodiff primitives:

* ``linear``: a stacked bidirectional chain, tanh cell nonlinearity,
  zero boundary states at both sequence ends.
* ``tree``: a stacked bidirectional child-sum cell over the dependency
  tree, ReLU cell nonlinearity. The upward direction treats a token's
  children as its predecessors (processed leaves-first), the downward
  direction its parents (processed roots-first). Each neighbor gets its
  own forget gate; neighbor hidden states enter the other gates as a
  plain sum, accumulated in ascending index order so runs reproduce
  bitwise.
* ``hybrid``: both of the above, concatenated per token.

The hidden size always equals the per-token input size, so stacking a
second layer doubles the gate input width (both directions of the layer
below feed it). A per-dataset regression head maps the final-layer state
of an annotated token to a scalar; heads are the only parameters not
shared across datasets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .corpus import ROOT, Sentence, children, parents
from .errors import ConfigError, DataError, ShapeError

__all__ = [
    "GATES",
    "ModelConfig",
    "BiLSTMStack",
    "RegressionHead",
    "ModelBundle",
    "init_model",
    "l_bilstm_forward",
    "t_bilstm_forward",
    "encode",
    "regress_token",
    "sentence_loss",
    "predict_tokens",
    "grad_check_adapter",
    "save_checkpoint",
    "load_checkpoint",
    "SHARED_HEAD",
]

GATES = ("f", "i", "o", "c")

#: head-map key used when one regression head serves every dataset
SHARED_HEAD = "*"

CHECKPOINT_FORMAT = "evfact-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    topology: str = "linear"  # linear | tree | hybrid
    layers: int = 2
    embedding_dim: int = 300
    feature_dim: int = 0
    datasets: tuple[str, ...] = ("UDS-IH2",)
    shared_head: bool = False

    def __post_init__(self):
        if self.topology not in ("linear", "tree", "hybrid"):
            raise ConfigError(f"unknown topology {self.topology!r}")
        if self.layers not in (1, 2):
            raise ConfigError(
                f"layers must be 1 or 2, got {self.layers} (deeper stacks overfit)"
            )
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be positive")
        if self.feature_dim < 0:
            raise ConfigError("feature_dim must be non-negative")
        if not self.datasets and not self.shared_head:
            raise ConfigError("config needs at least one dataset (or a shared head)")

    @property
    def input_dim(self) -> int:
        return self.embedding_dim + self.feature_dim

    @property
    def hidden_size(self) -> int:
        # hidden state size tracks the input size, also when features widen it
        return self.input_dim

    @property
    def head_input_dim(self) -> int:
        factor = 4 if self.topology == "hybrid" else 2
        return factor * self.hidden_size

    def to_json_dict(self) -> dict:
        return {
            "topology": self.topology,
            "layers": self.layers,
            "embedding_dim": self.embedding_dim,
            "feature_dim": self.feature_dim,
            "datasets": list(self.datasets),
            "shared_head": self.shared_head,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ModelConfig":
        return cls(
            topology=obj["topology"],
            layers=int(obj["layers"]),
            embedding_dim=int(obj["embedding_dim"]),
            feature_dim=int(obj["feature_dim"]),
            datasets=tuple(obj["datasets"]),
            shared_head=bool(obj["shared_head"]),
        )


class GateParams:
    """Weights and biases for one (layer, direction) cell."""

    def __init__(self, weights: dict[str, Tensor], biases: dict[str, Tensor]):
        self.W = weights
        self.b = biases


class BiLSTMStack:
    """Per-layer, per-direction gate parameters for one topology."""

    def __init__(self, topology: str, layers: int, hidden: int,
                 params: list[dict[str, GateParams]], nonlinearity: str):
        self.topology = topology
        self.layers = layers
        self.hidden = hidden
        self.params = params  # params[layer][direction] -> GateParams
        self.nonlinearity = nonlinearity  # tanh | relu

    @property
    def directions(self) -> tuple[str, str]:
        return ("up", "down") if self.topology == "tree" else ("fw", "bw")


class RegressionHead:
    """Two-layer scalar regressor: affine, ReLU, affine."""

    def __init__(self, V1: Tensor, b1: Tensor, V2: Tensor, b2: Tensor):
        self.V1 = V1
        self.b1 = b1
        self.V2 = V2
        self.b2 = b2


@dataclass
class ModelBundle:
    config: ModelConfig
    stacks: dict[str, BiLSTMStack]  # keyed "linear" / "tree"
    heads: dict[str, RegressionHead]
    seed: int = 0
    _params: dict[str, Tensor] = field(default_factory=dict, repr=False)

    def head_for(self, dataset: str) -> RegressionHead:
        if SHARED_HEAD in self.heads:
            return self.heads[SHARED_HEAD]
        head = self.heads.get(dataset)
        if head is None:
            raise ConfigError(f"no regression head for dataset {dataset!r}")
        return head

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_values(self, values: Mapping[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            missing = set(self._params) - set(values)
            extra = set(values) - set(self._params)
            raise DataError(
                f"parameter name mismatch (missing={sorted(missing)}, extra={sorted(extra)})"
            )
        for name, arr in values.items():
            tensor = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != tensor.values.shape:
                raise DataError(
                    f"parameter {name}: shape {arr.shape} != {tensor.values.shape}"
                )
            tensor.values[...] = arr


def _glorot(rng, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, (rows, cols))


def _init_stack(rng, topology: str, layers: int, hidden: int, input_dim: int,
                prefix: str, registry: dict[str, Tensor]) -> BiLSTMStack:
    nonlinearity = "relu" if topology == "tree" else "tanh"
    dir_names = ("up", "down") if topology == "tree" else ("fw", "bw")
    layer_params = []
    for layer in range(1, layers + 1):
        in_dim = input_dim if layer == 1 else 2 * hidden
        per_dir = {}
        for direction in dir_names:
            weights, biases = {}, {}
            for gate in GATES:
                wname = f"{prefix}.l{layer}.{direction}.W_{gate}"
                bname = f"{prefix}.l{layer}.{direction}.b_{gate}"
                weights[gate] = Tensor(
                    _glorot(rng, hidden, hidden + in_dim), trainable=True, name=wname
                )
                biases[gate] = Tensor(np.zeros(hidden), trainable=True, name=bname)
                registry[wname] = weights[gate]
                registry[bname] = biases[gate]
            per_dir[direction] = GateParams(weights, biases)
        layer_params.append(per_dir)
    return BiLSTMStack(topology, layers, hidden, layer_params, nonlinearity)


def _init_head(rng, input_dim: int, prefix: str,
               registry: dict[str, Tensor]) -> RegressionHead:
    hidden = input_dim // 2
    V1 = Tensor(_glorot(rng, hidden, input_dim), trainable=True, name=f"{prefix}.V1")
    b1 = Tensor(np.zeros(hidden), trainable=True, name=f"{prefix}.b1")
    V2 = Tensor(_glorot(rng, 1, hidden), trainable=True, name=f"{prefix}.V2")
    b2 = Tensor(np.zeros(1), trainable=True, name=f"{prefix}.b2")
    for t in (V1, b1, V2, b2):
        registry[t.name] = t
    return RegressionHead(V1, b1, V2, b2)


def init_model(config: ModelConfig, seed: int) -> ModelBundle:
    """Build a bundle with Glorot-uniform weights and zero biases.

    The same seed always produces bitwise-identical parameters: tensors
    are created in a fixed order from one generator.
    """
    rng = np.random.default_rng(seed)
    registry: dict[str, Tensor] = {}
    stacks: dict[str, BiLSTMStack] = {}
    hidden = config.hidden_size
    if config.topology in ("linear", "hybrid"):
        stacks["linear"] = _init_stack(
            rng, "linear", config.layers, hidden, config.input_dim, "linear", registry
        )
    if config.topology in ("tree", "hybrid"):
        stacks["tree"] = _init_stack(
            rng, "tree", config.layers, hidden, config.input_dim, "tree", registry
        )
    heads: dict[str, RegressionHead] = {}
    if config.shared_head:
        heads[SHARED_HEAD] = _init_head(
            rng, config.head_input_dim, "head.shared", registry
        )
    else:
        for dataset in sorted(config.datasets):
            heads[dataset] = _init_head(
                rng, config.head_input_dim, f"head.{dataset}", registry
            )
    return ModelBundle(config, stacks, heads, seed=seed, _params=registry)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _check_rows(rows: Sequence[Tensor], expected: int):
    if not rows:
        raise ShapeError("forward: need at least one token")
    for row in rows:
        if row.values.shape != (expected,):
            raise ShapeError(
                f"forward: token row has shape {row.values.shape}, expected ({expected},)"
            )


def _cell_nonlinearity(tape: Tape, stack: BiLSTMStack, override: str | None):
    kind = override or stack.nonlinearity
    return tape.tanh if kind == "tanh" else tape.relu


def l_bilstm_forward(
    stack: BiLSTMStack,
    tape: Tape,
    rows: Sequence[Tensor],
    return_layers: bool = False,
):
    """Chain recurrence in both directions; returns per-token [fw; bw] states.

    Boundary hidden and cell states beyond the sequence ends are zero.
    """
    if stack.topology != "linear":
        raise ConfigError("l_bilstm_forward: stack is not a chain stack")
    in_dim = stack.params[0]["fw"].W["f"].values.shape[1] - stack.hidden
    _check_rows(rows, in_dim)
    g = _cell_nonlinearity(tape, stack, None)
    n = len(rows)
    inputs = list(rows)
    all_layers = []
    for layer in range(stack.layers):
        states = {}
        for direction in ("fw", "bw"):
            p = stack.params[layer][direction]
            order = range(n) if direction == "fw" else range(n - 1, -1, -1)
            h_prev = tape.leaf(np.zeros(stack.hidden))
            c_prev = tape.leaf(np.zeros(stack.hidden))
            hs: list[Tensor | None] = [None] * n
            for t in order:
                z = tape.concat([h_prev, inputs[t]])
                f = tape.sigmoid(tape.affine(p.W["f"], z, p.b["f"]))
                i = tape.sigmoid(tape.affine(p.W["i"], z, p.b["i"]))
                o = tape.sigmoid(tape.affine(p.W["o"], z, p.b["o"]))
                c_hat = g(tape.affine(p.W["c"], z, p.b["c"]))
                c = tape.add(tape.hadamard(i, c_hat), tape.hadamard(f, c_prev))
                h = tape.hadamard(o, g(c))
                hs[t] = h
                h_prev, c_prev = h, c
            states[direction] = hs
        inputs = [tape.concat([states["fw"][t], states["bw"][t]]) for t in range(n)]
        all_layers.append(inputs)
    return all_layers if return_layers else inputs


def _post_order(sentence: Sentence) -> list[int]:
    order: list[int] = []
    roots = [t for t in range(len(sentence)) if sentence.heads[t] == ROOT]
    kid_lists = [children(sentence, t) for t in range(len(sentence))]
    for root in roots:
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
            else:
                stack.append((node, True))
                for kid in reversed(kid_lists[node]):
                    stack.append((kid, False))
    return order


def _pre_order(sentence: Sentence) -> list[int]:
    order: list[int] = []
    roots = [t for t in range(len(sentence)) if sentence.heads[t] == ROOT]
    kid_lists = [children(sentence, t) for t in range(len(sentence))]
    stack = list(reversed(roots))
    while stack:
        node = stack.pop()
        order.append(node)
        for kid in reversed(kid_lists[node]):
            stack.append(kid)
    return order


def t_bilstm_forward(
    stack: BiLSTMStack,
    tape: Tape,
    rows: Sequence[Tensor],
    sentence: Sentence,
    nonlinearity: str | None = None,
    return_layers: bool = False,
):
    """Child-sum recurrence up and down the tree; per-token [up; down] states.

    Every neighbor k of token t contributes its own forget gate computed
    from [h_k; x_t]; the other gates see the summed neighbor state. Empty
    neighborhoods contribute zero vectors. ``nonlinearity`` overrides the
    stack's cell nonlinearity (used by the chain-equivalence oracle).
    """
    if stack.topology != "tree":
        raise ConfigError("t_bilstm_forward: stack is not a tree stack")
    in_dim = stack.params[0]["up"].W["f"].values.shape[1] - stack.hidden
    _check_rows(rows, in_dim)
    if len(rows) != len(sentence):
        raise ShapeError(
            f"forward: {len(rows)} rows for sentence of length {len(sentence)}"
        )
    g = _cell_nonlinearity(tape, stack, nonlinearity)
    n = len(rows)
    neighborhoods = {
        "up": ([children(sentence, t) for t in range(n)], _post_order(sentence)),
        "down": ([parents(sentence, t) for t in range(n)], _pre_order(sentence)),
    }
    inputs = list(rows)
    all_layers = []
    for layer in range(stack.layers):
        states = {}
        for direction in ("up", "down"):
            p = stack.params[layer][direction]
            neighbors, order = neighborhoods[direction]
            hs: list[Tensor | None] = [None] * n
            cs: list[Tensor | None] = [None] * n
            for t in order:
                nbrs = neighbors[t]
                if nbrs:
                    h_hat = tape.add_n([hs[k] for k in nbrs])
                else:
                    h_hat = tape.leaf(np.zeros(stack.hidden))
                z = tape.concat([h_hat, inputs[t]])
                i = tape.sigmoid(tape.affine(p.W["i"], z, p.b["i"]))
                o = tape.sigmoid(tape.affine(p.W["o"], z, p.b["o"]))
                c_hat = g(tape.affine(p.W["c"], z, p.b["c"]))
                terms = [tape.hadamard(i, c_hat)]
                for k in nbrs:
                    zk = tape.concat([hs[k], inputs[t]])
                    f_tk = tape.sigmoid(tape.affine(p.W["f"], zk, p.b["f"]))
                    terms.append(tape.hadamard(f_tk, cs[k]))
                c = terms[0] if len(terms) == 1 else tape.add_n(terms)
                hs[t] = tape.hadamard(o, g(c))
                cs[t] = c
            states[direction] = hs
        inputs = [tape.concat([states["up"][t], states["down"][t]]) for t in range(n)]
        all_layers.append(inputs)
    return all_layers if return_layers else inputs


def encode(
    bundle: ModelBundle,
    tape: Tape,
    rows: Sequence[Tensor],
    sentence: Sentence | None = None,
) -> list[Tensor]:
    """Final-layer representation per token (hybrid: [chain; tree])."""
    topology = bundle.config.topology
    if topology in ("tree", "hybrid") and sentence is None:
        raise ConfigError(f"topology {topology!r} needs the dependency tree")
    if topology == "linear":
        return l_bilstm_forward(bundle.stacks["linear"], tape, rows)
    if topology == "tree":
        return t_bilstm_forward(bundle.stacks["tree"], tape, rows, sentence)
    lin = l_bilstm_forward(bundle.stacks["linear"], tape, rows)
    tre = t_bilstm_forward(bundle.stacks["tree"], tape, rows, sentence)
    return [tape.concat([lin[t], tre[t]]) for t in range(len(rows))]


def regress_token(head: RegressionHead, tape: Tape, h: Tensor) -> Tensor:
    """Scalar factuality estimate for one token's encoded state."""
    hidden = tape.relu(tape.affine(head.V1, h, head.b1))
    return tape.affine(head.V2, hidden, head.b2)


def sentence_loss(
    bundle: ModelBundle,
    tape: Tape,
    rows: Sequence[Tensor],
    sentence: Sentence,
    annotated: Sequence[tuple[int, float]],
    dataset: str,
) -> Tensor:
    """Sum of per-token robust losses over the sentence's annotated tokens."""
    if not annotated:
        raise ConfigError("sentence_loss: no annotated tokens")
    head = bundle.head_for(dataset)
    states = encode(bundle, tape, rows, sentence)
    losses = []
    for token, gold in sorted(annotated):
        if not 0 <= token < len(states):
            raise DataError(
                f"annotated token {token} out of range in sentence {sentence.sent_id!r}"
            )
        pred = regress_token(head, tape, states[token])
        losses.append(tape.huber(pred, gold))
    return losses[0] if len(losses) == 1 else tape.add_n(losses)


def predict_tokens(
    bundle: ModelBundle,
    tape: Tape,
    rows: Sequence[Tensor],
    sentence: Sentence,
    tokens: Sequence[int],
    dataset: str,
) -> dict[int, float]:
    """Raw scalar predictions for the given token positions."""
    head = bundle.head_for(dataset)
    states = encode(bundle, tape, rows, sentence)
    out = {}
    for token in tokens:
        pred = regress_token(head, tape, states[token])
        out[token] = float(pred.values[0])
    return out


def grad_check_adapter(
    config: ModelConfig,
    seed: int,
    sentence: Sentence,
    row_values: np.ndarray,
    annotated: Sequence[tuple[int, float]],
    dataset: str,
    include_rows: bool = False,
):
    """(fn, points) for :func:`evfact.autodiff.grad_check` over a full model.

    The checked leaves are every model parameter, plus the per-token input
    rows when ``include_rows`` is set, so the check runs end to end from
    the inputs through the encoder and head to the loss.
    """
    bundle = init_model(config, seed)
    names = sorted(bundle.named_parameters())
    n_params = len(names)

    def fn(values):
        bundle.load_values(dict(zip(names, values[:n_params])))
        tape = Tape()
        if include_rows:
            rows = [tape.leaf(v, trainable=True) for v in values[n_params:]]
        else:
            rows = [tape.leaf(row_values[t]) for t in range(len(sentence))]
        loss = sentence_loss(bundle, tape, rows, sentence, annotated, dataset)
        params = bundle.named_parameters()
        leaves = [params[n] for n in names]
        if include_rows:
            leaves.extend(rows)
        return tape, loss, leaves

    points = [bundle.named_parameters()[n].values.copy() for n in names]
    if include_rows:
        points.extend(np.array(row_values[t]) for t in range(len(sentence)))
    return fn, points


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------

def save_checkpoint(path, bundle: ModelBundle, extra: dict | None = None) -> None:
    """Write parameters plus config to an npz container; bitwise-exact."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": bundle.config.to_json_dict(),
        "seed": bundle.seed,
    }
    if extra:
        meta["extra"] = extra
    arrays = {f"param/{name}": t.values for name, t in bundle.named_parameters().items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path) -> tuple[ModelBundle, dict]:
    """Rebuild a bundle from a checkpoint; load(save(x)) is the identity."""
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise DataError(f"{path}: not a checkpoint file")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        config = ModelConfig.from_json_dict(meta["config"])
        bundle = init_model(config, seed=int(meta.get("seed", 0)))
        values = {
            name[len("param/"):]: data[name]
            for name in data.files
            if name.startswith("param/")
        }
    bundle.load_values(values)
    return bundle, meta
