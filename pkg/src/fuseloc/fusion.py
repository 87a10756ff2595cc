"""Multi-stream fusion network.

One recurrent encoder per sensor stream. Each stream's hidden states
immediately before the current step are projected to a scalar quality
score; the scores are softmax-normalized into importance weights, the
current hidden states are blended by those weights, and a small ReLU
MLP regresses the blended state to an (x, y) coordinate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .lstm import StreamEncoder, run_sequence

CHECKPOINT_VERSION = 1


class ConfigurationError(ValueError):
    """Model configuration violates a structural constraint."""


class UncertaintyHead:
    """Scalar quality score from the F hidden states before the last step."""

    def __init__(self, state_dim: int, history: int, rng: np.random.Generator | None = None):
        if history < 1:
            raise ConfigurationError("history length must be >= 1")
        self.history = history
        self.state_dim = state_dim
        dim = history * state_dim
        if rng is None:
            w = np.zeros((1, dim))
        else:
            w = rng.uniform(-1.0 / np.sqrt(dim), 1.0 / np.sqrt(dim), (1, dim))
        self.w_u = Tensor(w, requires_grad=True, name="w_u")
        self.b_u = Tensor(np.zeros(1), requires_grad=True, name="b_u")

    def parameters(self) -> list[Tensor]:
        return [self.w_u, self.b_u]


def uncertainty(head: UncertaintyHead, states: list) -> Tensor:
    """sigmoid(w_u . [h_(t-F); ...; h_(t-1)] + b_u), one scalar per row."""
    if len(states) != head.history:
        raise ConfigurationError(
            f"head expects {head.history} preceding states, got {len(states)}")
    joined = states[0] if len(states) == 1 else ad.concat(states, axis=-1)
    return ad.sigmoid(ad.linear(joined, head.w_u, head.b_u))


def importance_weights(scores: list) -> Tensor:
    """Softmax over the per-stream quality scores."""
    if not scores:
        raise ValueError("need at least one stream score")
    stacked = scores[0] if len(scores) == 1 else ad.concat(scores, axis=-1)
    return ad.softmax(stacked, axis=-1)


def fuse(states: list, alpha: Tensor) -> Tensor:
    """Importance-weighted sum of the current hidden states."""
    dims = {s.data.shape[-1] for s in states}
    if len(dims) != 1:
        raise ad.ShapeError(f"fused states must share their dimension, got {sorted(dims)}")
    if alpha.data.shape[-1] != len(states):
        raise ad.ShapeError(
            f"{alpha.data.shape[-1]} weights for {len(states)} states")
    total = None
    for m, h in enumerate(states):
        a_m = ad.slice_last(alpha, m, m + 1)
        term = ad.mul(a_m, h)
        total = term if total is None else ad.add(total, term)
    return total


class OutputMlp:
    """ReLU MLP head; the final layer is affine (coordinates are unbounded)."""

    def __init__(self, in_dim: int, hidden_dim: int = 128, n_layers: int = 2,
                 out_dim: int = 2, rng: np.random.Generator | None = None):
        if n_layers < 1:
            raise ConfigurationError("output block needs at least one layer")
        self.n_layers = n_layers
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        dims = [in_dim] + [hidden_dim] * (n_layers - 1) + [out_dim]
        for q in range(n_layers):
            d_in, d_out = dims[q], dims[q + 1]
            if rng is None:
                w = np.zeros((d_out, d_in))
            else:
                w = rng.uniform(-1.0 / np.sqrt(d_in), 1.0 / np.sqrt(d_in), (d_out, d_in))
            self.weights.append(Tensor(w, requires_grad=True, name=f"w_o{q}"))
            self.biases.append(Tensor(np.zeros(d_out), requires_grad=True, name=f"b_o{q}"))

    def parameters(self) -> list[Tensor]:
        return self.weights + self.biases


def predict(mlp: OutputMlp, fused) -> Tensor:
    """Coordinate estimate from a fused state (single vector or batch)."""
    v = fused
    for q in range(mlp.n_layers - 1):
        v = ad.relu(ad.linear(v, mlp.weights[q], mlp.biases[q]))
    return ad.linear(v, mlp.weights[-1], mlp.biases[-1])


def mse_loss(estimate, truth) -> Tensor:
    """Mean over the batch of half the squared coordinate error.

    Equals the plain mean of all squared component differences for 2-D
    targets, which is how it is computed.
    """
    est = estimate if isinstance(estimate, Tensor) else Tensor(estimate)
    diff = ad.sub(est, np.asarray(truth, dtype=np.float64))
    return ad.mean(ad.mul(diff, diff))


@dataclass
class FusionConfig:
    """Structural description of a fusion model; fully determines shapes."""

    sensors: tuple[str, ...]
    input_dims: dict[str, int]
    n_hidden: int = 256
    n_layers: int = 2
    bidirectional: bool = False
    dropout: float = 0.2
    history: int = 1          # preceding hidden states per uncertainty head
    window: int = 10          # sequence length the model was built for
    mlp_hidden: int = 128
    mlp_layers: int = 2
    peephole: bool = True

    def __post_init__(self):
        self.sensors = tuple(self.sensors)
        if not self.sensors:
            raise ConfigurationError("need at least one sensor stream")
        if len(set(self.sensors)) != len(self.sensors):
            raise ConfigurationError(f"duplicate sensors in {self.sensors}")
        missing = [s for s in self.sensors if s not in self.input_dims]
        if missing:
            raise ConfigurationError(f"input_dims missing for {missing}")
        if self.history > self.window - 1:
            raise ConfigurationError(
                f"history={self.history} needs window >= {self.history + 1}, "
                f"got window={self.window}")


class FusionModel:
    """Encoders, uncertainty heads and output MLP for a set of sensors."""

    def __init__(self, config: FusionConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.encoders: dict[str, StreamEncoder] = {}
        self.heads: dict[str, UncertaintyHead] = {}
        for sensor in config.sensors:
            enc = StreamEncoder(
                n_input=config.input_dims[sensor],
                n_hidden=config.n_hidden,
                n_layers=config.n_layers,
                bidirectional=config.bidirectional,
                dropout=config.dropout,
                peephole=config.peephole,
            )
            if rng is not None:
                enc.init_params(rng)
            self.encoders[sensor] = enc
            self.heads[sensor] = UncertaintyHead(enc.output_dim, config.history, rng)
        self.mlp = OutputMlp(self.encoders[config.sensors[0]].output_dim,
                             config.mlp_hidden, config.mlp_layers, 2, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for sensor in self.config.sensors:
            enc = self.encoders[sensor]
            for l, cell in enumerate(enc.layers):
                for p in cell.parameters():
                    out[f"enc/{sensor}/l{l}/fwd/{p.name}"] = p
            for l, cell in enumerate(enc.layers_back):
                for p in cell.parameters():
                    out[f"enc/{sensor}/l{l}/bwd/{p.name}"] = p
            head = self.heads[sensor]
            out[f"head/{sensor}/w_u"] = head.w_u
            out[f"head/{sensor}/b_u"] = head.b_u
        for q, (w, b) in enumerate(zip(self.mlp.weights, self.mlp.biases)):
            out[f"mlp/w{q}"] = w
            out[f"mlp/b{q}"] = b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def forward(self, streams: dict[str, np.ndarray], mode: str = "eval",
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Coordinate estimates and importance weights for a window batch.

        ``streams`` maps sensor name to a (T, d) window or (B, T, d)
        batch; all configured sensors must be present.
        """
        cfg = self.config
        missing = [s for s in cfg.sensors if s not in streams]
        if missing:
            raise KeyError(f"missing sensor stream(s): {missing}")
        last_states = []
        scores = []
        for sensor in cfg.sensors:
            hs = run_sequence(self.encoders[sensor], streams[sensor], mode=mode, rng=rng)
            if len(hs) != cfg.window:
                raise ad.ShapeError(
                    f"stream {sensor!r} has {len(hs)} steps, model expects {cfg.window}")
            preceding = hs[len(hs) - 1 - cfg.history:len(hs) - 1]
            scores.append(uncertainty(self.heads[sensor], preceding))
            last_states.append(hs[-1])
        alpha = importance_weights(scores)
        fused = fuse(last_states, alpha)
        return predict(self.mlp, fused), alpha


# ---------------------------------------------------------------------------
# checkpoint serialization


def manifest_fingerprint(manifest: dict) -> str:
    """Stable hash of a manifest dict, used to pin checkpoints to data."""
    canon = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def save_checkpoint(model: FusionModel, path, manifest_hash: str = "",
                    extra: dict | None = None) -> None:
    cfg = model.config
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "manifest_hash": manifest_hash,
        "config": {
            "sensors": list(cfg.sensors),
            "input_dims": cfg.input_dims,
            "n_hidden": cfg.n_hidden,
            "n_layers": cfg.n_layers,
            "bidirectional": cfg.bidirectional,
            "dropout": cfg.dropout,
            "history": cfg.history,
            "window": cfg.window,
            "mlp_hidden": cfg.mlp_hidden,
            "mlp_layers": cfg.mlp_layers,
            "peephole": cfg.peephole,
        },
        "params": {
            name: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
            for name, p in model.named_parameters().items()
        },
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[FusionModel, dict]:
    """Rebuild a model from disk; returns (model, checkpoint header)."""
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    c = doc["config"]
    config = FusionConfig(
        sensors=tuple(c["sensors"]),
        input_dims={k: int(v) for k, v in c["input_dims"].items()},
        n_hidden=c["n_hidden"],
        n_layers=c["n_layers"],
        bidirectional=c["bidirectional"],
        dropout=c["dropout"],
        history=c["history"],
        window=c["window"],
        mlp_hidden=c["mlp_hidden"],
        mlp_layers=c["mlp_layers"],
        peephole=c.get("peephole", True),
    )
    rng = np.random.default_rng(0)  # placeholder values, overwritten below
    model = FusionModel(config, rng)
    params = model.named_parameters()
    if set(params) != set(doc["params"]):
        raise ValueError("checkpoint parameter names do not match the model structure")
    for name, p in params.items():
        entry = doc["params"][name]
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != p.data.shape:
            raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
        p.data = arr
    header = {"format_version": version, "manifest_hash": doc.get("manifest_hash", ""),
              "extra": doc.get("extra", {})}
    return model, header
