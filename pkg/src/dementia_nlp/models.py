"""The three utterance classifiers: CNN, stacked LSTM and CNN-LSTM.

Every forward function takes a batch as ``(ids[B, L], lengths[B])`` and
returns logits of shape (B, 2). Class 0 is Control and class 1 is AD.
Passing a dict as ``probes`` collects named activations on the way.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .autodiff import (
    ParamSet, Tensor, blend, concat, conv1d, dense, dropout, dropout_mask,
    embed_lookup, glorot_uniform, lstm_cell, max_over_time, mul_const, relu,
    softmax, unstack,
)
from .corpus.encoding import PAD_ID
from .errors import ConfigError, UsageError

ARCHITECTURES = ("cnn", "lstm", "cnn_lstm")


@dataclass
class CnnConfig:
    vocab_size: int
    max_len: int
    embed_dim: int = 300
    filter_sizes: tuple = (3, 4, 5)
    filters_per_size: int = 128
    keep_prob: float = 0.80
    classes: int = 2

    def validate(self):
        _check_common(self)
        fs = list(self.filter_sizes)
        if not fs or fs != sorted(fs) or min(fs) < 1:
            raise ConfigError("filter sizes must be positive and ascending")
        if self.filters_per_size < 1:
            raise ConfigError("filters_per_size must be positive")


@dataclass
class LstmConfig:
    vocab_size: int
    max_len: int
    embed_dim: int = 300
    layers: int = 2
    hidden: int = 128
    keep_prob: float = 0.70
    classes: int = 2

    def validate(self):
        _check_common(self)
        if self.layers < 1 or self.hidden < 1:
            raise ConfigError("lstm needs at least one layer and one hidden unit")


@dataclass
class CnnLstmConfig:
    vocab_size: int
    max_len: int
    embed_dim: int = 300
    filter_sizes: tuple = (3, 4, 5, 6)
    filters_per_size: int = 100
    lstm_hidden: int = 300
    keep_prob: float = 0.65
    classes: int = 2

    def validate(self):
        _check_common(self)
        fs = list(self.filter_sizes)
        if not fs or fs != sorted(fs) or min(fs) < 1:
            raise ConfigError("filter sizes must be positive and ascending")
        if self.filters_per_size < 1 or self.lstm_hidden < 1:
            raise ConfigError("filters_per_size and lstm_hidden must be positive")


ModelConfig = Union[CnnConfig, LstmConfig, CnnLstmConfig]
CONFIG_TYPES = {"cnn": CnnConfig, "lstm": LstmConfig, "cnn_lstm": CnnLstmConfig}


def _check_common(cfg):
    if cfg.vocab_size < 3 or cfg.max_len < 1 or cfg.embed_dim < 1:
        raise ConfigError("vocab_size >= 3, max_len >= 1 and embed_dim >= 1 required")
    if cfg.classes != 2:
        raise ConfigError("only binary classification is supported")
    if not 0.0 < cfg.keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must lie in (0, 1], got {cfg.keep_prob}")


@dataclass
class ModelHandle:
    arch: str
    config: ModelConfig
    params: ParamSet
    vocab_hash: str = ""

    @property
    def probe_names(self):
        return probe_names(self.arch, self.config)

    @property
    def dropout_rate(self):
        return 1.0 - self.config.keep_prob


def probe_names(arch, config):
    names = ["embed"]
    if arch in ("cnn", "cnn_lstm"):
        names += [f"conv{w}" for w in config.filter_sizes]
    names.append("pooled" if arch == "cnn" else "h_final")
    names.append("pre_softmax")
    return names


def default_config(arch, vocab_size, max_len, **overrides) -> ModelConfig:
    if arch not in CONFIG_TYPES:
        raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    cfg = CONFIG_TYPES[arch](vocab_size=vocab_size, max_len=max_len, **overrides)
    cfg.validate()
    return cfg


def _add_lstm(ps, prefix, rng, d_in, hidden):
    ps.add(f"{prefix}.Wx", glorot_uniform(rng, (d_in, 4 * hidden), d_in, 4 * hidden))
    ps.add(f"{prefix}.Wh", glorot_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate
    ps.add(f"{prefix}.b", b)


def init_model(arch: str, config: ModelConfig, rng: np.random.Generator) -> ModelHandle:
    """Initialise parameters: embeddings U(+-0.05), Glorot-uniform weights, zero biases."""
    config.validate()
    ps = ParamSet()
    D = config.embed_dim
    ps.add("embed", rng.uniform(-0.05, 0.05, size=(config.vocab_size, D)))
    if arch in ("cnn", "cnn_lstm"):
        F = config.filters_per_size
        for w in config.filter_sizes:
            ps.add(f"conv{w}.W", glorot_uniform(rng, (w, D, F), w * D, F))
            ps.add(f"conv{w}.b", np.zeros(F))
    if arch == "cnn":
        width = len(config.filter_sizes) * config.filters_per_size
    elif arch == "lstm":
        d_in = D
        for layer in range(config.layers):
            _add_lstm(ps, f"lstm{layer}", rng, d_in, config.hidden)
            d_in = config.hidden
        width = config.hidden
    elif arch == "cnn_lstm":
        _add_lstm(ps, "lstm0", rng, len(config.filter_sizes) * config.filters_per_size,
                  config.lstm_hidden)
        width = config.lstm_hidden
    else:
        raise ConfigError(f"unknown architecture {arch!r}")
    ps.add("out.W", glorot_uniform(rng, (width, config.classes), width, config.classes))
    ps.add("out.b", np.zeros(config.classes))
    return ModelHandle(arch, config, ps)


def _prepare_ids(m: ModelHandle, ids, lengths):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if m.arch == "cnn":
        need = max(m.config.filter_sizes)
        if ids.shape[1] < need:
            ids = np.pad(ids, ((0, 0), (0, need - ids.shape[1])), constant_values=PAD_ID)
    else:
        T = max(1, int(lengths.max()))
        ids = ids[:, :T]
    return ids, lengths


def embed(m: ModelHandle, ids, lengths):
    """Embedding lookup on the ids each architecture actually reads."""
    ids, lengths = _prepare_ids(m, ids, lengths)
    return embed_lookup(m.params["embed"], ids), lengths


def _run_lstm(xs, lengths, Wx, Wh, b, rec_mask=None):
    B = lengths.shape[0]
    H = Wh.shape[0]
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    outs = []
    for t, x in enumerate(xs):
        h_in = mul_const(h, rec_mask) if rec_mask is not None else h
        h_new, c_new = lstm_cell(x, h_in, c, Wx, Wh, b)
        active = (lengths > t)[:, None]
        if active.all():
            h, c = h_new, c_new
        else:
            # finished sequences carry their state through PAD steps
            h = blend(active, h_new, h)
            c = blend(active, c_new, c)
        outs.append(h)
    return outs, h


def _cnn_from_embedded(m, emb, lengths, train, rng, probes):
    p = m.params
    maps = []
    for w in m.config.filter_sizes:
        fm = relu(conv1d(emb, p[f"conv{w}.W"], p[f"conv{w}.b"], "valid"))
        if probes is not None:
            probes[f"conv{w}"] = fm
        maps.append(max_over_time(fm))
    pooled = concat(maps, axis=-1)
    if probes is not None:
        probes["pooled"] = pooled
    pooled = dropout(pooled, m.dropout_rate, train, rng)
    return dense(pooled, p["out.W"], p["out.b"])


def _lstm_from_embedded(m, emb, lengths, train, rng, probes):
    p = m.params
    xs = unstack(emb, axis=1)
    h = None
    for layer in range(m.config.layers):
        pre = f"lstm{layer}"
        xs, h = _run_lstm(xs, lengths, p[pre + ".Wx"], p[pre + ".Wh"], p[pre + ".b"])
    if probes is not None:
        probes["h_final"] = h
    h = dropout(h, m.dropout_rate, train, rng)
    return dense(h, p["out.W"], p["out.b"])


def _cnn_lstm_from_embedded(m, emb, lengths, train, rng, probes):
    p = m.params
    B, T, _ = emb.shape
    valid = (np.arange(T)[None, :] < lengths[:, None])[:, :, None].astype(np.float64)
    # zero the PAD rows so same-padded windows see identical context
    x = mul_const(emb, np.broadcast_to(valid, emb.shape)) if not valid.all() else emb
    maps = []
    for w in m.config.filter_sizes:
        fm = relu(conv1d(x, p[f"conv{w}.W"], p[f"conv{w}.b"], "same"))
        if probes is not None:
            probes[f"conv{w}"] = fm
        maps.append(fm)
    seq = unstack(concat(maps, axis=-1), axis=1)
    rec_mask = None
    if train and m.dropout_rate > 0:
        rec_mask = dropout_mask((B, m.config.lstm_hidden), m.dropout_rate, rng)
    _, h = _run_lstm(seq, lengths, p["lstm0.Wx"], p["lstm0.Wh"], p["lstm0.b"], rec_mask)
    if probes is not None:
        probes["h_final"] = h
    h = dropout(h, m.dropout_rate, train, rng)
    return dense(h, p["out.W"], p["out.b"])


_BODIES = {"cnn": _cnn_from_embedded, "lstm": _lstm_from_embedded,
           "cnn_lstm": _cnn_lstm_from_embedded}


def forward_embedded(m: ModelHandle, emb: Tensor, lengths, train=False, rng=None,
                     probes: Optional[dict] = None) -> Tensor:
    """Run everything after the embedding layer on a (B, L, D) tensor."""
    if train and m.dropout_rate > 0 and rng is None:
        raise UsageError("train mode needs a random generator for dropout")
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if probes is not None:
        probes["embed"] = emb
    logits = _BODIES[m.arch](m, emb, lengths, train, rng, probes)
    if probes is not None:
        probes["pre_softmax"] = logits
    return logits


def forward(m: ModelHandle, ids, lengths, train=False, rng=None, probes=None) -> Tensor:
    emb, lengths = embed(m, ids, lengths)
    return forward_embedded(m, emb, lengths, train, rng, probes)


def _check_arch(m, arch):
    if m.arch != arch:
        raise UsageError(f"expected a {arch} model, got {m.arch}")


def cnn_forward(m, ids, lengths, train=False, rng=None, probes=None):
    _check_arch(m, "cnn")
    return forward(m, ids, lengths, train, rng, probes)


def lstm_forward(m, ids, lengths, train=False, rng=None, probes=None):
    _check_arch(m, "lstm")
    return forward(m, ids, lengths, train, rng, probes)


def cnn_lstm_forward(m, ids, lengths, train=False, rng=None, probes=None):
    _check_arch(m, "cnn_lstm")
    return forward(m, ids, lengths, train, rng, probes)


def predict_proba(m: ModelHandle, ids, lengths) -> np.ndarray:
    return softmax(forward(m, ids, lengths).data)


def probe_activations(m: ModelHandle, ids, lengths, probe_name: str) -> np.ndarray:
    """Eval-mode activations at ``probe_name`` flattened to (B, n).

    Sequence-shaped probes are zero-padded to ``max_len`` positions so rows
    from different batches line up.
    """
    names = m.probe_names
    if probe_name not in names:
        raise KeyError(f"unknown probe {probe_name!r} for {m.arch}; valid probes: {', '.join(names)}")
    probes = {}
    forward(m, ids, lengths, probes=probes)
    a = probes[probe_name].data
    if a.ndim == 3:
        if m.arch != "cnn":
            # recurrent models never read steps past the true length
            _, lengths = _prepare_ids(m, ids, lengths)
            a = a * (np.arange(a.shape[1])[None, :, None] < lengths[:, None, None])
            L = max(m.config.max_len, a.shape[1])
            a = np.pad(a, ((0, 0), (0, L - a.shape[1]), (0, 0)))
        a = a.reshape(a.shape[0], -1)
    return a


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def config_to_text(m: ModelHandle) -> str:
    lines = [f"arch={m.arch}", f"vocab_hash={m.vocab_hash}"]
    for k, v in asdict(m.config).items():
        if isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str):
    kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
    arch = kv.pop("arch")
    vocab_hash = kv.pop("vocab_hash", "")
    cls = CONFIG_TYPES[arch]
    kwargs = {}
    for f in fields(cls):
        if f.name not in kv:
            continue
        raw = kv.pop(f.name)
        if f.name == "filter_sizes":
            kwargs[f.name] = tuple(int(x) for x in raw.split(","))
        elif f.name == "keep_prob":
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = int(raw)
    if kv:
        raise ConfigError(f"unknown model config keys: {sorted(kv)}")
    return arch, cls(**kwargs), vocab_hash


def save_model(m: ModelHandle, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    m.params.save(d / "model.params")
    (d / "model.config").write_text(config_to_text(m), encoding="utf-8")


def load_model(directory) -> ModelHandle:
    d = Path(directory)
    arch, cfg, vocab_hash = config_from_text((d / "model.config").read_text(encoding="utf-8"))
    return ModelHandle(arch, cfg, ParamSet.load(d / "model.params"), vocab_hash)
