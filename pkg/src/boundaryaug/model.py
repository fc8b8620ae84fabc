"""Word-level encoder, attribute classifier, and autoregressive decoder.

The encoder mean-pools token embeddings and maps the pooled vector through a
one-hidden-layer MLP to a fixed-dimension latent. The classifier is a single
linear-softmax head over the latent, which keeps its latent gradient in
closed form. The decoder is a per-step MLP over [latent ; previous-token
embedding ; sinusoidal position] producing a distribution over the
vocabulary. Parameters serialize to a self-describing JSON checkpoint that
round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nm
from .numerics import Tensor

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

CHECKPOINT_VERSION = 1


class Vocabulary:
    """Bidirectional token/id map with fixed reserved ids."""

    def __init__(self, tokens: Sequence[str] = ()):
        self._tokens: list[str] = list(RESERVED_TOKENS)
        self._index: dict[str, int] = {t: i for i, t in enumerate(self._tokens)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        existing = self._index.get(token)
        if existing is not None:
            return existing
        idx = len(self._tokens)
        self._tokens.append(token)
        self._index[token] = idx
        return idx

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        """Build from whitespace-split, lowercased text in first-seen order."""
        vocab = cls()
        for text in texts:
            for tok in tokenize(text):
                vocab.add(tok)
        if len(vocab) < 5:
            raise ValueError(f"vocabulary needs at least one non-reserved token, got {len(vocab)} ids")
        return vocab

    def encode_text(self, text: str) -> list[int]:
        return [self._index.get(tok, UNK_ID) for tok in tokenize(text)]

    def decode_ids(self, ids: Sequence[int]) -> str:
        return " ".join(self._tokens[i] for i in ids)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def id_of(self, token: str) -> int | None:
        return self._index.get(token)

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def non_reserved_ids(self) -> list[int]:
        return list(range(len(RESERVED_TOKENS), len(self._tokens)))

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults are small enough that
    finite-difference oracles run in milliseconds."""

    n_classes: int = 2
    embed_dim: int = 32
    latent_dim: int = 16
    encoder_hidden: int = 32
    decoder_hidden: int = 64
    position_dim: int = 16
    max_len: int = 24

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.latent_dim < 2:
            raise ValueError(f"latent_dim must be >= 2, got {self.latent_dim}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


@dataclass
class EncoderParams:
    embed: Tensor  # (|V|, embed_dim)
    w1: Tensor  # (hidden, embed_dim)
    b1: Tensor  # (hidden,)
    w2: Tensor  # (latent_dim, hidden)
    b2: Tensor  # (latent_dim,)

    def tensors(self) -> list[Tensor]:
        return [self.embed, self.w1, self.b1, self.w2, self.b2]


@dataclass
class ClassifierParams:
    w: Tensor  # (n_classes, latent_dim)
    b: Tensor  # (n_classes,)

    def tensors(self) -> list[Tensor]:
        return [self.w, self.b]

    @property
    def n_classes(self) -> int:
        return self.w.shape[0]


@dataclass
class DecoderParams:
    embed: Tensor  # (|V|, embed_dim), embeds the previous output token
    w1: Tensor  # (hidden, latent_dim + embed_dim + position_dim)
    b1: Tensor  # (hidden,)
    w2: Tensor  # (|V|, hidden)
    b2: Tensor  # (|V|,)
    max_len: int

    def tensors(self) -> list[Tensor]:
        return [self.embed, self.w1, self.b1, self.w2, self.b2]


def _param(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def init_encoder(vocab_size: int, cfg: ModelConfig, rng: np.random.Generator) -> EncoderParams:
    return EncoderParams(
        embed=_param(rng, (vocab_size, cfg.embed_dim), 0.1),
        w1=_param(rng, (cfg.encoder_hidden, cfg.embed_dim), 1.0 / np.sqrt(cfg.embed_dim)),
        b1=Tensor(np.zeros(cfg.encoder_hidden), requires_grad=True),
        w2=_param(rng, (cfg.latent_dim, cfg.encoder_hidden), 1.0 / np.sqrt(cfg.encoder_hidden)),
        b2=Tensor(np.zeros(cfg.latent_dim), requires_grad=True),
    )


def init_classifier(cfg: ModelConfig, rng: np.random.Generator) -> ClassifierParams:
    return ClassifierParams(
        w=_param(rng, (cfg.n_classes, cfg.latent_dim), 1.0 / np.sqrt(cfg.latent_dim)),
        b=Tensor(np.zeros(cfg.n_classes), requires_grad=True),
    )


def init_decoder(vocab_size: int, cfg: ModelConfig, rng: np.random.Generator) -> DecoderParams:
    step_in = cfg.latent_dim + cfg.embed_dim + cfg.position_dim
    return DecoderParams(
        embed=_param(rng, (vocab_size, cfg.embed_dim), 0.1),
        w1=_param(rng, (cfg.decoder_hidden, step_in), 1.0 / np.sqrt(step_in)),
        b1=Tensor(np.zeros(cfg.decoder_hidden), requires_grad=True),
        w2=_param(rng, (vocab_size, cfg.decoder_hidden), 1.0 / np.sqrt(cfg.decoder_hidden)),
        b2=Tensor(np.zeros(vocab_size), requires_grad=True),
        max_len=cfg.max_len,
    )


@lru_cache(maxsize=None)
def _position_table(max_len: int, dim: int) -> np.ndarray:
    positions = np.arange(max_len)[:, None]
    freq = np.exp(-np.log(10000.0) * (2 * (np.arange(dim) // 2)) / dim)
    angles = positions * freq[None, :]
    table = np.where(np.arange(dim) % 2 == 0, np.sin(angles), np.cos(angles))
    table.setflags(write=False)
    return table


def positional_encoding(position: int, dim: int, max_len: int) -> np.ndarray:
    return _position_table(max_len, dim)[position]


def encode(token_ids: Sequence[int], enc: EncoderParams) -> Tensor:
    """Latent vector for a token sequence: MLP over the mean embedding of
    non-PAD tokens. Mean pooling makes the result order-insensitive."""
    kept = [i for i in token_ids if i != PAD_ID]
    if not kept:
        raise ValueError("encode: token sequence is empty after PAD removal")
    rows = nm.embedding(enc.embed, kept)
    pooled = nm.mean_axis(rows, 0)
    hidden = nm.tanh(nm.add(nm.matmul(enc.w1, pooled), enc.b1))
    return nm.add(nm.matmul(enc.w2, hidden), enc.b2)


def classify(latent: Tensor, clf: ClassifierParams) -> Tensor:
    """Class probability vector softmax(W @ latent + b)."""
    if latent.shape != (clf.w.shape[1],):
        raise nm.ShapeMismatchError("classify", [latent.shape, clf.w.shape], "latent dimension mismatch")
    return nm.softmax(nm.add(nm.matmul(clf.w, latent), clf.b))


def decode_step(latent: Tensor, prefix: Sequence[int], position: int, dec: DecoderParams) -> Tensor:
    """Next-token distribution given the latent and the generated prefix.

    The prefix carries the conditioning token at its end (BOS at position 0);
    only that last token feeds the step MLP.
    """
    if position >= dec.max_len:
        raise ValueError(f"decode_step: position {position} >= max_len {dec.max_len}")
    if not prefix:
        raise ValueError("decode_step: prefix must contain at least the start token")
    pos_dim = dec.w1.shape[1] - dec.embed.shape[1] - latent.shape[0]
    prev = nm.embedding(dec.embed, [prefix[-1]])
    step_in = nm.concat(
        [
            latent,
            nm.mean_axis(prev, 0),
            Tensor(positional_encoding(position, pos_dim, dec.max_len)),
        ]
    )
    hidden = nm.tanh(nm.add(nm.matmul(dec.w1, step_in), dec.b1))
    return nm.softmax(nm.add(nm.matmul(dec.w2, hidden), dec.b2))


@dataclass
class TrainedModel:
    """Bundle of everything a checkpoint stores."""

    vocab: Vocabulary
    config: ModelConfig
    encoder: EncoderParams
    classifier: ClassifierParams
    decoder: DecoderParams | None = None
    metadata: dict = field(default_factory=dict)


def _array_out(t: Tensor) -> list:
    return t.values.tolist()


def _array_in(data, shape_hint: str) -> Tensor:
    arr = np.asarray(data, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"checkpoint: empty array for {shape_hint}")
    return Tensor(arr, requires_grad=True)


def save_checkpoint(path, model: TrainedModel) -> None:
    cfg = model.config
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "hyperparameters": {
            "vocab_size": len(model.vocab),
            "n_classes": cfg.n_classes,
            "embed_dim": cfg.embed_dim,
            "latent_dim": cfg.latent_dim,
            "encoder_hidden": cfg.encoder_hidden,
            "decoder_hidden": cfg.decoder_hidden,
            "position_dim": cfg.position_dim,
            "max_len": cfg.max_len,
        },
        "vocabulary": model.vocab.tokens,
        "encoder": {k: _array_out(t) for k, t in zip(("embed", "w1", "b1", "w2", "b2"), model.encoder.tensors())},
        "classifier": {k: _array_out(t) for k, t in zip(("w", "b"), model.classifier.tensors())},
        "decoder": None
        if model.decoder is None
        else {k: _array_out(t) for k, t in zip(("embed", "w1", "b1", "w2", "b2"), model.decoder.tensors())},
        "metadata": model.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint: unsupported format version {version!r}")
    hp = doc["hyperparameters"]
    cfg = ModelConfig(
        n_classes=hp["n_classes"],
        embed_dim=hp["embed_dim"],
        latent_dim=hp["latent_dim"],
        encoder_hidden=hp["encoder_hidden"],
        decoder_hidden=hp["decoder_hidden"],
        position_dim=hp["position_dim"],
        max_len=hp["max_len"],
    )
    tokens = doc["vocabulary"]
    if tokens[: len(RESERVED_TOKENS)] != list(RESERVED_TOKENS):
        raise ValueError("checkpoint: reserved vocabulary entries are missing or reordered")
    vocab = Vocabulary(tokens[len(RESERVED_TOKENS) :])
    if len(vocab) != hp["vocab_size"]:
        raise ValueError(
            f"checkpoint: vocabulary length {len(vocab)} does not match declared size {hp['vocab_size']}"
        )
    enc_doc = doc["encoder"]
    encoder = EncoderParams(*(_array_in(enc_doc[k], f"encoder.{k}") for k in ("embed", "w1", "b1", "w2", "b2")))
    clf_doc = doc["classifier"]
    classifier = ClassifierParams(*(_array_in(clf_doc[k], f"classifier.{k}") for k in ("w", "b")))
    decoder = None
    if doc.get("decoder") is not None:
        dec_doc = doc["decoder"]
        decoder = DecoderParams(
            *(_array_in(dec_doc[k], f"decoder.{k}") for k in ("embed", "w1", "b1", "w2", "b2")),
            max_len=cfg.max_len,
        )
    return TrainedModel(
        vocab=vocab,
        config=cfg,
        encoder=encoder,
        classifier=classifier,
        decoder=decoder,
        metadata=doc.get("metadata", {}),
    )
