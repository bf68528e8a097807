"""Desk-scale model fixture: a two-layer dense MLP on a synthetic task.

The fixture carries everything the remediation stack needs that would come
from offline training: ideal weights, per-chunk salience, gradient and
diagonal-Hessian tables, plus a labelled evaluation batch used only to score
accuracy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..accelerator import AcceleratorConfig
from ..errors import DidNotConverge, SchemaError, ShapeMismatch
from ..rng import Stream, substream

FORMAT = "ringdrift-fixture/1"
ACTIVATIONS = ("relu", "none")
ACCURACY_FLOOR = 0.95
BUNDLED = "mlp_fixture.json"


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str = "relu"


@dataclass
class ModelFixture:
    layers: list[DenseLayer]
    geometry: tuple[int, int, int]
    gradients: list[np.ndarray]
    hessian_diag: list[np.ndarray]
    chunk_keys: list[tuple[int, int, int]]
    salience_first: np.ndarray
    salience_second: np.ndarray
    eval_inputs: np.ndarray
    eval_labels: np.ndarray
    manifest: dict = field(default_factory=dict)

    @property
    def clean_accuracy(self) -> float:
        return float(self.manifest["clean_accuracy"])

    def salience(self, order: str = "first"):
        from ..calibration import SalienceTable

        scores = self.salience_first if order == "first" else self.salience_second
        return SalienceTable(keys=tuple(self.chunk_keys), scores=scores)


# ---------------------------------------------------------------- data


def spiral_dataset(n_per_class: int, seed: int, noise: float = 0.06, turns: float = 1.25):
    """Two interleaved 2-D spirals, labels 0/1."""
    rng = substream(seed, Stream.DATASET, n_per_class)
    t = np.sqrt(rng.uniform(0.0, 1.0, size=(2, n_per_class)))
    theta = t * turns * 2 * math.pi
    pts = []
    for cls in (0, 1):
        ang = theta[cls] + cls * math.pi
        xy = np.stack([t[cls] * np.cos(ang), t[cls] * np.sin(ang)], axis=1)
        pts.append(xy + noise * rng.standard_normal(xy.shape))
    X = np.concatenate(pts)
    y = np.repeat([0, 1], n_per_class)
    order = rng.permutation(len(y))
    return X[order], y[order]


def rbf_features(points: np.ndarray, grid: int = 4, width: float = 0.7) -> np.ndarray:
    """Lift 2-D points onto a grid x grid bank of Gaussian bumps (values in (0, 1])."""
    g = np.linspace(-1.0, 1.0, grid)
    centres = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    d2 = ((points[:, None, :] - centres[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2 * width * width))


def make_split(n_per_class: int, seed: int):
    X, y = spiral_dataset(n_per_class, seed)
    return rbf_features(X), y


# ---------------------------------------------------------------- model


def forward(layers: list[DenseLayer], X: np.ndarray) -> np.ndarray:
    """Software reference forward pass; X is (batch, in)."""
    h = X
    for layer in layers:
        h = h @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h


def softmax_xent(logits: np.ndarray, y: np.ndarray):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    loss = -np.log(p[np.arange(len(y)), y] + 1e-300).mean()
    d = p.copy()
    d[np.arange(len(y)), y] -= 1.0
    return loss, d / len(y)


def loss_and_grads(layers: list[DenseLayer], X: np.ndarray, y: np.ndarray):
    acts = [X]
    pre = []
    h = X
    for layer in layers:
        z = h @ layer.weight.T + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(h)
    loss, d = softmax_xent(h, y)
    gw, gb = [], []
    for i in reversed(range(len(layers))):
        if layers[i].activation == "relu":
            d = d * (pre[i] > 0)
        gw.append(d.T @ acts[i])
        gb.append(d.sum(axis=0))
        d = d @ layers[i].weight
    return loss, gw[::-1], gb[::-1]


def accuracy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == y))


def hessian_diagonal(layers: list[DenseLayer], X, y, eps: float = 1e-4) -> list[np.ndarray]:
    """Diagonal of the task-loss Hessian w.r.t. each weight, by central differences."""
    out = []
    for li, layer in enumerate(layers):
        diag = np.zeros_like(layer.weight)
        for idx in np.ndindex(layer.weight.shape):
            orig = layer.weight[idx]
            layer.weight[idx] = orig + eps
            _, gp, _ = loss_and_grads(layers, X, y)
            layer.weight[idx] = orig - eps
            _, gm, _ = loss_and_grads(layers, X, y)
            layer.weight[idx] = orig
            diag[idx] = (gp[li][idx] - gm[li][idx]) / (2 * eps)
        out.append(diag)
    return out


def chunk_layout(shapes, geometry) -> list[tuple[int, int, int]]:
    R, C, k = geometry
    keys = []
    for li, (M, N) in enumerate(shapes):
        for p in range(math.ceil(M / (R * k))):
            for q in range(math.ceil(N / (C * k))):
                keys.append((li, p, q))
    return keys


def chunk_means(tables: list[np.ndarray], geometry) -> np.ndarray:
    """Mean |value| over the real entries of every Rk x Ck chunk."""
    R, C, k = geometry
    scores = []
    for li, p, q in chunk_layout([t.shape for t in tables], geometry):
        block = tables[li][p * R * k : (p + 1) * R * k, q * C * k : (q + 1) * C * k]
        scores.append(float(np.abs(block).mean()))
    return np.array(scores)


def train_fixture(
    epochs: int = 200,
    seed: int = 0,
    hidden: int = 32,
    geometry: tuple[int, int, int] = (4, 4, 8),
    n_train_per_class: int = 600,
    n_eval: int = 256,
    lr: float = 5e-3,
    weight_decay: float = 1e-4,
    batch_size: int = 32,
) -> ModelFixture:
    """Train the 16 -> hidden -> 2 MLP with Adam and derive its tables.

    Raises DidNotConverge when held-out accuracy stays below 95%.
    """
    Xtr, ytr = make_split(n_train_per_class, seed)
    Xev, yev = make_split(n_eval // 2, seed + 1)
    rng = substream(seed, Stream.INIT)
    dims = [Xtr.shape[1], hidden, 2]
    layers = []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        W = rng.standard_normal((dims[i + 1], fan_in)) * math.sqrt(2.0 / fan_in)
        layers.append(DenseLayer(W, np.zeros(dims[i + 1]), "relu" if i < len(dims) - 2 else "none"))

    params = [arr for layer in layers for arr in (layer.weight, layer.bias)]
    m1 = [np.zeros_like(a) for a in params]
    m2 = [np.zeros_like(a) for a in params]
    b1, b2, step = 0.9, 0.999, 0
    n = len(ytr)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            _, gw, gb = loss_and_grads(layers, Xtr[sel], ytr[sel])
            grads = [g for pair in zip(gw, gb) for g in pair]
            step += 1
            lr_t = lr * 0.5 * (1 + math.cos(math.pi * epoch / epochs))
            for i, (a, g) in enumerate(zip(params, grads)):
                if i % 2 == 0:
                    g = g + weight_decay * a
                m1[i] = b1 * m1[i] + (1 - b1) * g
                m2[i] = b2 * m2[i] + (1 - b2) * g * g
                mhat = m1[i] / (1 - b1**step)
                vhat = m2[i] / (1 - b2**step)
                a -= lr_t * mhat / (np.sqrt(vhat) + 1e-8)

    clean = accuracy(forward(layers, Xev), yev)
    if clean < ACCURACY_FLOOR:
        raise DidNotConverge(f"held-out accuracy {clean:.4f} below {ACCURACY_FLOOR}")
    _, grads, _ = loss_and_grads(layers, Xtr, ytr)
    hess = hessian_diagonal(layers, Xtr, ytr)
    keys = chunk_layout([l.weight.shape for l in layers], geometry)
    return ModelFixture(
        layers=layers,
        geometry=tuple(geometry),
        gradients=grads,
        hessian_diag=hess,
        chunk_keys=keys,
        salience_first=chunk_means(grads, geometry),
        salience_second=chunk_means(hess, geometry),
        eval_inputs=Xev,
        eval_labels=yev,
        manifest={
            "seed": seed,
            "epochs": epochs,
            "hidden": hidden,
            "dataset": "spirals-rbf16",
            "clean_accuracy": clean,
            "train_accuracy": accuracy(forward(layers, Xtr), ytr),
        },
    )


# ---------------------------------------------------------------- I/O


def _arr(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(obj, what: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.asarray(obj["data"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{what}: malformed array ({exc})") from None
    if data.size != math.prod(shape):
        raise ShapeMismatch(f"{what}: {data.size} values for shape {shape}")
    return data.reshape(shape)


def fixture_to_dict(fx: ModelFixture) -> dict:
    return {
        "format": FORMAT,
        "geometry": dict(zip(("tiles", "cores", "k"), fx.geometry)),
        "layers": [
            {"weight": _arr(l.weight), "bias": _arr(l.bias), "activation": l.activation} for l in fx.layers
        ],
        "gradients": [_arr(g) for g in fx.gradients],
        "hessian_diag": [_arr(h) for h in fx.hessian_diag],
        "salience": {
            "chunks": [list(key) for key in fx.chunk_keys],
            "first_order": fx.salience_first.tolist(),
            "second_order": fx.salience_second.tolist(),
        },
        "eval": {"inputs": _arr(fx.eval_inputs), "labels": [int(v) for v in fx.eval_labels]},
        "manifest": fx.manifest,
    }


def fixture_from_dict(doc) -> ModelFixture:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise SchemaError(f"not a {FORMAT} document")
    try:
        geo = doc["geometry"]
        geometry = (int(geo["tiles"]), int(geo["cores"]), int(geo["k"]))
        layers = []
        for i, raw in enumerate(doc["layers"]):
            act = raw.get("activation", "none")
            if act not in ACTIVATIONS:
                raise SchemaError(f"layer {i}: unknown activation {act!r}")
            layers.append(DenseLayer(_unarr(raw["weight"], f"layer {i} weight"), _unarr(raw["bias"], f"layer {i} bias"), act))
        grads = [_unarr(g, "gradient") for g in doc["gradients"]]
        hess = [_unarr(h, "hessian") for h in doc["hessian_diag"]]
        sal = doc["salience"]
        keys = [tuple(int(v) for v in key) for key in sal["chunks"]]
        first = np.asarray(sal["first_order"], dtype=float)
        second = np.asarray(sal["second_order"], dtype=float)
        ev = doc["eval"]
        Xev = _unarr(ev["inputs"], "eval inputs")
        yev = np.asarray(ev["labels"], dtype=int)
        manifest = dict(doc["manifest"])
        manifest["clean_accuracy"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"missing or malformed field: {exc}") from None

    if not layers:
        raise SchemaError("fixture has no layers")
    for i, layer in enumerate(layers):
        if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[0],):
            raise ShapeMismatch(f"layer {i}: weight {layer.weight.shape} / bias {layer.bias.shape}")
        if i and layer.weight.shape[1] != layers[i - 1].weight.shape[0]:
            raise ShapeMismatch(f"layer {i} expects {layer.weight.shape[1]} inputs, previous layer emits {layers[i - 1].weight.shape[0]}")
    for name, tables in (("gradient", grads), ("hessian", hess)):
        if [t.shape for t in tables] != [l.weight.shape for l in layers]:
            raise ShapeMismatch(f"{name} tables do not match layer shapes")
    expected = chunk_layout([l.weight.shape for l in layers], geometry)
    if keys != expected or first.shape != (len(expected),) or second.shape != (len(expected),):
        raise ShapeMismatch(f"salience covers {len(first)} chunks, layout has {len(expected)}")
    if Xev.ndim != 2 or Xev.shape[1] != layers[0].weight.shape[1] or len(yev) != len(Xev):
        raise ShapeMismatch("evaluation set does not match the input layer")
    return ModelFixture(layers, geometry, grads, hess, keys, first, second, Xev, yev, manifest)


def save_fixture(fx: ModelFixture, path) -> None:
    Path(path).write_text(json.dumps(fixture_to_dict(fx)))


def load_fixture(path=None) -> ModelFixture:
    """Load a fixture file; ``None`` loads the bundled MLP."""
    if path is None:
        text = resources.files("ringdrift.data").joinpath(BUNDLED).read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"fixture is not valid JSON: {exc}") from None
    return fixture_from_dict(doc)


def check_geometry(fx: ModelFixture, cfg: AcceleratorConfig) -> None:
    if fx.geometry != (cfg.tiles, cfg.cores, cfg.k):
        raise ShapeMismatch(f"fixture chunk tables assume geometry {fx.geometry}, accelerator is {(cfg.tiles, cfg.cores, cfg.k)}")
