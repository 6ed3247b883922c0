"""Toy BERT-style encoder classifier and its MIMO variant.

Layout: token + learned positional embeddings (``z_embed``), ``num_blocks``
post-LN attention blocks, then a classification head (pooler dense + tanh,
output dense, softmax) applied to the first-position vector of the last block.

The MIMO classifier keeps one embedding table and a shared trunk, but gives
each of its ``members`` its own first block, last block and head.  The first
block outputs of all members are averaged before entering the trunk.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
MASK_NEG = -1e9
CHECKPOINT_FORMAT = "calib-lab-checkpoint"


@dataclass
class EncoderConfig:
    vocab_size: int = 1000
    max_seq_len: int = 64
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    num_blocks: int = 4
    dropout_rate: float = 0.1
    num_classes: int = 2
    init_std: float = 0.02

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if self.num_blocks < 2:
            raise ValueError("num_blocks must be >= 2")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.vocab_size <= CLS_ID:
            raise ValueError("vocab_size must leave room for the reserved ids")


@dataclass
class Prediction:
    """Probability rows with derived class and confidence."""

    probs: np.ndarray

    @property
    def label(self) -> np.ndarray:
        # argmax breaks ties toward the lowest index
        return self.probs.argmax(axis=-1)

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=-1)


def padding_mask(tokens: np.ndarray) -> np.ndarray:
    return tokens != PAD_ID


def _as_batch(tokens) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2:
        raise ValueError(f"tokens must be 1-D or 2-D, got shape {tokens.shape}")
    if tokens.shape[1] == 0:
        raise ValueError("empty token sequence")
    return tokens.astype(np.int64, copy=False)


class _Module:
    """Flat, path-keyed parameter store shared by both classifiers."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, Parameter] = {}
        self.dropout_rate = config.dropout_rate
        self._rng = rng

    # -- construction -----------------------------------------------------
    def _normal(self, name: str, shape) -> None:
        self.params[name] = Parameter(self._rng.normal(0.0, self.config.init_std, size=shape))

    def _const(self, name: str, shape, value: float) -> None:
        self.params[name] = Parameter(np.full(shape, value))

    def _linear(self, prefix: str, n_in: int, n_out: int) -> None:
        self._normal(f"{prefix}.w", (n_in, n_out))
        self._const(f"{prefix}.b", (n_out,), 0.0)

    def _norm(self, prefix: str, dim: int) -> None:
        self._const(f"{prefix}.gamma", (dim,), 1.0)
        self._const(f"{prefix}.beta", (dim,), 0.0)

    def _init_embedding(self) -> None:
        c = self.config
        self._normal("embed.tok", (c.vocab_size, c.model_dim))
        self._normal("embed.pos", (c.max_seq_len, c.model_dim))
        self._norm("embed.ln", c.model_dim)

    def _init_block(self, prefix: str) -> None:
        d = self.config.model_dim
        self._linear(f"{prefix}.attn.qkv", d, 3 * d)
        self._linear(f"{prefix}.attn.out", d, d)
        self._norm(f"{prefix}.ln1", d)
        self._linear(f"{prefix}.ffn.up", d, self.config.ffn_dim)
        self._linear(f"{prefix}.ffn.down", self.config.ffn_dim, d)
        self._norm(f"{prefix}.ln2", d)

    def _init_head(self, prefix: str) -> None:
        d = self.config.model_dim
        self._linear(f"{prefix}.pooler", d, d)
        self._linear(f"{prefix}.out", d, self.config.num_classes)

    # -- access -----------------------------------------------------------
    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        return iter(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, v in state.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = v.copy()
            self.params[k].zero_grad()

    # -- forward pieces ---------------------------------------------------
    def _dense(self, prefix: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{prefix}.w"] + self.params[f"{prefix}.b"]

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"])

    def _check_tokens(self, tokens: np.ndarray) -> None:
        c = self.config
        if tokens.shape[1] > c.max_seq_len:
            raise ValueError(f"sequence length {tokens.shape[1]} exceeds max_seq_len {c.max_seq_len}")
        if tokens.min() < 0 or tokens.max() >= c.vocab_size:
            raise ValueError(f"token id out of range [0, {c.vocab_size})")

    def _embed(self, tokens: np.ndarray, rng) -> Tensor:
        self._check_tokens(tokens)
        s = tokens.shape[1]
        x = ad.embedding(self.params["embed.tok"], tokens) + self.params["embed.pos"][:s]
        return ad.dropout(self._ln("embed.ln", x), self.dropout_rate, rng)

    def _block(self, prefix: str, x: Tensor, mask_add: np.ndarray, rng) -> Tensor:
        c = self.config
        b, s, d = x.shape
        h = c.num_heads
        dh = d // h
        qkv = self._dense(f"{prefix}.attn.qkv", x).reshape(b, s, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)) + mask_add
        ctx = (ad.softmax(scores) @ v).transpose(0, 2, 1, 3).reshape(b, s, d)
        attn = ad.dropout(self._dense(f"{prefix}.attn.out", ctx), self.dropout_rate, rng)
        x = self._ln(f"{prefix}.ln1", x + attn)
        ff = self._dense(f"{prefix}.ffn.down", ad.gelu(self._dense(f"{prefix}.ffn.up", x)))
        x = self._ln(f"{prefix}.ln2", x + ad.dropout(ff, self.dropout_rate, rng))
        return x

    def _head(self, prefix: str, pooled: Tensor, rng) -> Tensor:
        if pooled.ndim != 2 or pooled.shape[1] != self.config.model_dim:
            raise ValueError(f"pooled embedding must be (batch, {self.config.model_dim}), got {pooled.shape}")
        rate = self.dropout_rate
        x = ad.tanh(self._dense(f"{prefix}.pooler", ad.dropout(pooled, rate, rng)))
        return self._dense(f"{prefix}.out", ad.dropout(x, rate, rng))

    @staticmethod
    def _mask_add(mask: np.ndarray) -> np.ndarray:
        return np.where(mask, 0.0, MASK_NEG)[:, None, None, :]

    def reinit_heads(self, rng: np.random.Generator) -> None:
        """Redraw every head parameter (used for shared-body deep ensembles)."""
        old = self._rng
        self._rng = rng
        prefixes = sorted({k.rsplit(".", 2)[0] for k in self.params if k.startswith("head")})
        for prefix in prefixes:
            self._init_head(prefix)
        self._rng = old

    def weight_scope(self, scope: str) -> list[Parameter]:
        """Parameters whose path starts with ``scope``; "penultimate" means the pooler(s)."""
        if scope == "penultimate":
            return [p for k, p in self.params.items() if ".pooler." in k]
        if scope == "all":
            return self.parameters()
        return [p for k, p in self.params.items() if k.startswith(scope)]


class TransformerClassifier(_Module):
    """Encoder classifier; ``forward == classify(encode(tokens))``."""

    def __init__(self, config: EncoderConfig, seed: int | np.random.Generator = 0):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        super().__init__(config, rng)
        self._init_embedding()
        for i in range(config.num_blocks):
            self._init_block(f"blocks.{i}")
        self._init_head("head")

    def encode(self, tokens, mask: np.ndarray | None = None, rng=None) -> Tensor:
        """Pooled embedding: first-position vector of the last block, shape (B, D).

        ``rng`` enables dropout; pass None for deterministic evaluation.
        """
        tokens = _as_batch(tokens)
        mask = padding_mask(tokens) if mask is None else np.asarray(mask, dtype=bool).reshape(tokens.shape)
        mask_add = self._mask_add(mask)
        x = self._embed(tokens, rng)
        for i in range(self.config.num_blocks):
            x = self._block(f"blocks.{i}", x, mask_add, rng)
        return x[:, 0, :]

    def logits(self, pooled: Tensor, rng=None) -> Tensor:
        return self._head("head", ad.as_tensor(pooled), rng)

    def classify(self, pooled, rng=None) -> Tensor:
        """Class probabilities (B, K) from pooled embeddings."""
        return ad.softmax(self.logits(pooled, rng))

    def forward(self, tokens, mask=None, rng=None) -> Tensor:
        return self.classify(self.encode(tokens, mask, rng), rng)

    def predict(self, tokens, mask=None, rng=None) -> Prediction:
        with ad.no_grad():
            return Prediction(self.forward(tokens, mask, rng).data)


class MimoClassifier(_Module):
    """M sub-networks sharing embeddings and the middle blocks.

    Member ``m`` owns ``first.m`` (block 1), ``last.m`` (block L) and, unless
    ``share_heads`` is set, ``head.m``.  The trunk ``blocks.1 .. blocks.L-2``
    is shared.
    """

    def __init__(self, config: EncoderConfig, members: int = 2, seed: int | np.random.Generator = 0,
                 share_heads: bool = False):
        if members < 1:
            raise ValueError("members must be >= 1")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        super().__init__(config, rng)
        self.members = members
        self.share_heads = share_heads
        self._init_embedding()
        for m in range(members):
            self._init_block(f"first.{m}")
        for i in range(1, config.num_blocks - 1):
            self._init_block(f"blocks.{i}")
        for m in range(members):
            self._init_block(f"last.{m}")
        if share_heads:
            self._init_head("head")
        else:
            for m in range(members):
                self._init_head(f"head.{m}")

    @classmethod
    def from_classifier(cls, clf: TransformerClassifier, members: int = 1,
                        share_heads: bool = False) -> "MimoClassifier":
        """Copy a single classifier's weights into every member slot."""
        mimo = cls(clf.config, members=members, seed=0, share_heads=share_heads)
        last = clf.config.num_blocks - 1
        state = {}
        for name in mimo.params:
            parts = name.split(".")
            if parts[0] == "first":
                src = ".".join(["blocks", "0"] + parts[2:])
            elif parts[0] == "last":
                src = ".".join(["blocks", str(last)] + parts[2:])
            elif parts[0] == "head" and not share_heads:
                src = ".".join(["head"] + parts[2:])
            else:
                src = name
            state[name] = clf.params[src].data
        mimo.load_state_dict(state)
        return mimo

    def _head_prefix(self, m: int) -> str:
        return "head" if self.share_heads else f"head.{m}"

    def _member_inputs(self, tokens, masks):
        if not isinstance(tokens, (list, tuple)) or np.isscalar(tokens[0]):
            tokens = [tokens] * self.members
        tokens = [_as_batch(t) for t in tokens]
        if len(tokens) != self.members:
            raise ValueError(f"expected {self.members} member inputs, got {len(tokens)}")
        if len({t.shape for t in tokens}) != 1:
            raise ValueError("member inputs must share one (batch, length) shape")
        if masks is None:
            masks = [padding_mask(t) for t in tokens]
        else:
            if isinstance(masks, np.ndarray) and masks.ndim <= 2:
                masks = [masks] * self.members
            masks = [np.asarray(mk, dtype=bool).reshape(tokens[0].shape) for mk in masks]
        return tokens, masks

    def encode(self, tokens, masks=None, rng=None) -> list[Tensor]:
        """Per-member pooled embeddings.

        ``tokens`` is either one (B, S) array, repeated to every member, or a
        list of ``members`` arrays of identical shape.
        """
        tokens, masks = self._member_inputs(tokens, masks)
        z = None
        for m, (t, mk) in enumerate(zip(tokens, masks)):
            g1 = self._block(f"first.{m}", self._embed(t, rng), self._mask_add(mk), rng)
            z = g1 if z is None else z + g1
        z = z * (1.0 / self.members)
        trunk_mask = self._mask_add(np.logical_or.reduce(masks))
        for i in range(1, self.config.num_blocks - 1):
            z = self._block(f"blocks.{i}", z, trunk_mask, rng)
        return [self._block(f"last.{m}", z, trunk_mask, rng)[:, 0, :] for m in range(self.members)]

    def logits(self, m: int, pooled: Tensor, rng=None) -> Tensor:
        return self._head(self._head_prefix(m), ad.as_tensor(pooled), rng)

    def classify(self, m: int, pooled, rng=None) -> Tensor:
        return ad.softmax(self.logits(m, pooled, rng))

    def forward(self, tokens, masks=None, rng=None) -> tuple[list[Tensor], Tensor]:
        """Member probabilities and their average."""
        pooled = self.encode(tokens, masks, rng)
        member_probs = [self.classify(m, z, rng) for m, z in enumerate(pooled)]
        avg = member_probs[0]
        for p in member_probs[1:]:
            avg = avg + p
        return member_probs, avg * (1.0 / self.members)

    def predict(self, tokens, mask=None, rng=None) -> Prediction:
        with ad.no_grad():
            return Prediction(self.forward(tokens, mask, rng)[1].data)


def mimo_forward(model: MimoClassifier, tokens, masks=None, rng=None) -> tuple[list[Tensor], Tensor]:
    return model.forward(tokens, masks, rng)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_dict(model: _Module, **extra) -> dict:
    """JSON-ready checkpoint: config, kind, and path -> {shape, values}."""
    if isinstance(model, MimoClassifier):
        kind = {"kind": "mimo", "members": model.members, "share_heads": model.share_heads}
    else:
        kind = {"kind": "transformer"}
    params = {
        name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
        for name, p in sorted(model.params.items())
    }
    return {"format": CHECKPOINT_FORMAT, "version": 1, **kind,
            "config": asdict(model.config), "extra": extra, "params": params}


def model_from_checkpoint(ckpt: dict) -> tuple[_Module, dict]:
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a calib-lab checkpoint")
    config = EncoderConfig(**ckpt["config"])
    if ckpt["kind"] == "mimo":
        model: _Module = MimoClassifier(config, ckpt["members"], share_heads=ckpt["share_heads"])
    else:
        model = TransformerClassifier(config)
    state = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in ckpt["params"].items()
    }
    model.load_state_dict(state)
    return model, ckpt.get("extra", {})


def save_checkpoint(model: _Module, path, **extra) -> Path:
    path = Path(path)
    path.write_text(json.dumps(checkpoint_dict(model, **extra)))
    return path


def load_checkpoint(path) -> tuple[_Module, dict]:
    return model_from_checkpoint(json.loads(Path(path).read_text()))


def stack_member_probs(member_probs: Sequence[Tensor]) -> np.ndarray:
    return np.stack([p.data for p in member_probs])
