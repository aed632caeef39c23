"""Text preprocessing, vocabulary, and sequence/node-feature encoding.

Sentences are lowercased, digits spelled out, contractions expanded,
then split on whitespace/punctuation and truncated.  Sequences run
through a 2-layer recurrent encoder (GRU cells) and the top layer's
final state is the text embedding.  PAD tokens are inert: they are
skipped, so a PAD-only sequence encodes like an empty one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GruParams, Tensor

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SEP_TOKEN = "|"

_DIGIT_WORDS = {
    "0": "zero", "1": "one", "2": "two", "3": "three", "4": "four",
    "5": "five", "6": "six", "7": "seven", "8": "eight", "9": "nine",
}

# applied in order on lowercased text; the specific pairs go first
_CONTRACTIONS = [
    ("won't", "will not"),
    ("can't", "cannot"),
    ("n't", " not"),
    ("'re", " are"),
    ("'m", " am"),
    ("'ll", " will"),
    ("'ve", " have"),
    ("'d", " would"),
    ("'s", " is"),
]

_TOKEN_RE = re.compile(r"[a-z]+|[^\sa-z]")


def tokenize(text: str, max_len: int = 40) -> list[str]:
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    s = text.lower()
    for pat, rep in _CONTRACTIONS:
        s = s.replace(pat, rep)
    s = "".join(f" {_DIGIT_WORDS[c]} " if c in _DIGIT_WORDS else c for c in s)
    return _TOKEN_RE.findall(s)[:max_len]


class Vocabulary:
    """token -> id map with reserved PAD=0 and UNK=1, insertion-ordered."""

    def __init__(self, tokens: Optional[Sequence[str]] = None):
        self.id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.token_to_id: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for t in tokens or []:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)
        return self.token_to_id[token]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


def build_vocab(corpus: Sequence[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Ids in first-occurrence order for tokens with count >= min_count."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: dict[str, int] = {}
    order: list[str] = []
    for tokens in corpus:
        for t in tokens:
            if t not in counts:
                order.append(t)
            counts[t] = counts.get(t, 0) + 1
    return Vocabulary([t for t in order if counts[t] >= min_count])


@dataclass
class EncoderParams:
    embedding: Tensor           # (|V|, e); row 0 (PAD) frozen at zero
    layer1: GruParams           # e -> d
    layer2: GruParams           # d -> d
    fuse_w: Optional[Tensor] = None   # (d, d + ctx_dim), present iff context vectors are used
    fuse_b: Optional[Tensor] = None

    @staticmethod
    def init(vocab_size: int, embed_dim: int, hidden_dim: int,
             rng: np.random.Generator, ctx_dim: int = 0) -> "EncoderParams":
        bound = 1.0 / np.sqrt(hidden_dim)
        emb = rng.uniform(-bound, bound, size=(vocab_size, embed_dim))
        emb[PAD_ID] = 0.0
        fuse_w = fuse_b = None
        if ctx_dim > 0:
            fuse_w = Tensor.param(rng.uniform(-bound, bound, size=(hidden_dim, hidden_dim + ctx_dim)))
            fuse_b = Tensor.param(rng.uniform(-bound, bound, size=(hidden_dim,)))
        return EncoderParams(
            embedding=Tensor.param(emb),
            # bias the update gate toward keeping state (small write
            # fraction): tokens integrate over a longer horizon, so early
            # tokens survive into the final state
            layer1=GruParams.init(embed_dim, hidden_dim, rng, z_bias=-1.7),
            layer2=GruParams.init(hidden_dim, hidden_dim, rng, z_bias=-1.7),
            fuse_w=fuse_w,
            fuse_b=fuse_b,
        )

    @property
    def hidden_dim(self) -> int:
        return self.layer1.uz.values.shape[0]

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"encoder.embedding": self.embedding}
        for li, layer in (("l1", self.layer1), ("l2", self.layer2)):
            for name, t in zip(("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"),
                               layer.tensors()):
                out[f"encoder.{li}.{name}"] = t
        if self.fuse_w is not None:
            out["encoder.fuse.w"] = self.fuse_w
            out["encoder.fuse.b"] = self.fuse_b
        return out


def encode_sequence(ids: Sequence[int], p: EncoderParams) -> Tensor:
    """Final top-layer hidden state; empty (or all-PAD) input gives zeros."""
    vocab_size = p.embedding.values.shape[0]
    for i in ids:
        if not 0 <= i < vocab_size:
            raise IndexError(f"token id {i} out of vocabulary range {vocab_size}")
    ids = [i for i in ids if i != PAD_ID]
    d = p.hidden_dim
    h1 = Tensor.const(np.zeros(d))
    h2 = Tensor.const(np.zeros(d))
    for i in ids:
        x = ad.row(p.embedding, i)
        h1 = ad.gru_cell(h1, x, p.layer1)
        h2 = ad.gru_cell(h2, h1, p.layer2)
    return h2


def encode_batch(seqs: Sequence[Sequence[int]], p: EncoderParams) -> Tensor:
    """Encode several sequences at once; returns (B, d), rows match
    encode_sequence on each sequence exactly."""
    clean = [[i for i in s if i != PAD_ID] for s in seqs]
    bsz = len(clean)
    d = p.hidden_dim
    max_len = max((len(s) for s in clean), default=0)
    if max_len == 0:
        return Tensor.const(np.zeros((bsz, d)))
    idx = np.full((bsz, max_len), PAD_ID, dtype=np.int64)
    for b, s in enumerate(clean):
        idx[b, :len(s)] = s
    lengths = np.array([len(s) for s in clean])
    h1 = Tensor.const(np.zeros((bsz, d)))
    h2 = Tensor.const(np.zeros((bsz, d)))
    for t in range(max_len):
        active = t < lengths
        x = ad.rows(p.embedding, idx[:, t])
        h1 = ad.where_rows(active, ad.gru_cell(h1, x, p.layer1), h1)
        h2 = ad.where_rows(active, ad.gru_cell(h2, h1, p.layer2), h2)
    return h2


def fuse(h: Tensor, ctx: Optional[np.ndarray], p: EncoderParams) -> Tensor:
    """Concat+fc fusion with a per-dialog context vector; identity without one."""
    if ctx is None:
        return h
    if p.fuse_w is None:
        raise ValueError("encoder has no fusion parameters but a context vector was given")
    return ad.relu(ad.linear(ad.concat(h, Tensor.const(ctx)), p.fuse_w, p.fuse_b))
