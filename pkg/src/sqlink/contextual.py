"""Miniature deterministic contextual encoder.

Stands in for a large pretrained encoder at desk scale.  Word vectors are
built from hashed character n-grams (so morphological variants land close
together) plus a small built-in synonym lexicon (so semantically related
words land close together), and a short stack of self-attention layers
mixes context so that masking one token displaces related tokens'
representations.  Everything is derived from stable hashes: the same
inputs produce bit-identical outputs across processes and runs.

The interface other modules rely on: ``encode(tokens, mask_position)``
returning one vector per token, plus ``dim``, ``max_len``, ``cache_name``.
Any encoder with the same surface (e.g. a real PLM wrapper) can be
substituted.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
from torch import nn

from .errors import CapacityError

MASK_TOKEN = "[mask]"

DEFAULT_SYNONYM_CLUSTERS = (
    ("singer", "singers", "musician", "musicians", "vocalist", "vocalists",
     "artist", "artists"),
    ("concert", "concerts", "show", "shows", "gig", "gigs"),
    ("stadium", "stadiums", "arena", "arenas", "venue", "venues"),
    ("capacity", "capacities", "seats", "seating"),
    ("name", "names", "title", "titles"),
    ("age", "ages", "maturity", "maturities"),
    ("country", "countries", "nation", "nations", "homeland", "homelands"),
    ("location", "locations", "place", "places", "site", "sites"),
    ("year", "years", "date", "dates"),
    ("dog", "dogs", "puppy", "puppies", "pet", "pets"),
    ("owner", "owners", "keeper", "keepers"),
    ("breed", "breeds", "kind", "kinds", "variety", "varieties"),
    ("city", "cities", "town", "towns"),
    ("cost", "costs", "price", "prices", "fee", "fees"),
    ("treatment", "treatments", "procedure", "procedures"),
    ("france", "french"),
    ("average", "mean"),
    ("oldest", "eldest"),
)


def _hash_seed(key: str) -> int:
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(),
                          "little")


def _hashed_unit_vector(key: str, dim: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(_hash_seed(key)))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _char_ngrams(word: str) -> list[str]:
    padded = f"<{word}>"
    grams = []
    for n in range(3, 6):
        grams.extend(padded[k:k + n] for k in range(len(padded) - n + 1))
    return grams or [padded]


class MiniTextEncoder(nn.Module):
    """Deterministic subword + synonym embedding with attention mixing.

    cluster_weight sets how strongly lexicon membership dominates the
    surface-form part of a word vector; sharpness scales attention logits
    so related tokens attend to each other well above the background.
    """

    def __init__(self, dim: int = 64, layers: int = 2, seed: int = 0,
                 max_len: int = 512, sharpness: float = 6.0,
                 char_weight: float = 0.6, cluster_weight: float = 1.0,
                 position_weight: float = 0.1,
                 clusters=DEFAULT_SYNONYM_CLUSTERS,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.dim = dim
        self.n_layers = layers
        self.seed = seed
        self.max_len = max_len
        self.sharpness = sharpness
        self.char_weight = char_weight
        self.cluster_weight = cluster_weight
        self.position_weight = position_weight
        self.clusters = tuple(tuple(c) for c in clusters)
        self._cluster_of = {}
        for k, cluster in enumerate(self.clusters):
            for word in cluster:
                self._cluster_of.setdefault(word, k)
        self._token_cache: dict[str, np.ndarray] = {}
        self._dtype = dtype

        for li in range(layers):
            for mat, scale in (("wq", sharpness), ("wk", sharpness),
                               ("wv", 1.0), ("wo", 0.5)):
                rng = np.random.Generator(np.random.PCG64(
                    _hash_seed(f"enc{seed}/layer{li}/{mat}")))
                w = scale * np.eye(dim) + 0.02 * rng.standard_normal((dim, dim))
                self.register_parameter(
                    f"{mat}_{li}",
                    nn.Parameter(torch.as_tensor(w, dtype=dtype)))

    @property
    def cache_name(self) -> str:
        lex = hashlib.blake2b(
            repr(self.clusters).encode(), digest_size=4).hexdigest()
        return (f"mini{self.dim}x{self.n_layers}-s{self.seed}"
                f"-g{self.sharpness:g}-lex{lex}")

    def token_vector(self, token: str) -> np.ndarray:
        """Context-free unit vector for one token."""
        cached = self._token_cache.get(token)
        if cached is not None:
            return cached
        word = token.lower()
        if word.startswith("[") and word.endswith("]"):
            v = _hashed_unit_vector(f"special::{word}", self.dim)
        else:
            grams = _char_ngrams(word)
            char = np.zeros(self.dim)
            for g in grams:
                char += _hashed_unit_vector(f"ngram::{g}", self.dim)
            char /= np.linalg.norm(char)
            v = self.char_weight * char
            cluster = self._cluster_of.get(word)
            if cluster is not None:
                v = v + self.cluster_weight * _hashed_unit_vector(
                    f"cluster::{cluster}::{self.clusters[cluster][0]}", self.dim)
            v = v / np.linalg.norm(v)
        self._token_cache[token] = v
        return v

    def _positional(self, n: int) -> torch.Tensor:
        pos = np.arange(n)[:, None]
        k = np.arange(self.dim // 2)[None, :]
        angle = pos / (10000.0 ** (2 * k / self.dim))
        enc = np.concatenate([np.sin(angle), np.cos(angle)], axis=1)
        return torch.as_tensor(enc[:, :self.dim], dtype=self._dtype)

    def encode(self, tokens: list[str],
               mask_position: int | None = None) -> torch.Tensor:
        """Encode a token sequence; optionally substitute one token by [MASK].

        Returns a (len(tokens), dim) tensor of the final layer.  The mask is
        a substitution, never a deletion, so sequence length is preserved.
        """
        if len(tokens) > self.max_len:
            raise CapacityError(
                f"sequence of {len(tokens)} tokens exceeds encoder limit "
                f"{self.max_len}")
        if mask_position is not None and not 0 <= mask_position < len(tokens):
            raise CapacityError(f"mask position {mask_position} out of range")
        rows = [self.token_vector(t) for t in tokens]
        if mask_position is not None:
            rows = list(rows)
            rows[mask_position] = self.token_vector(MASK_TOKEN)
        x = torch.as_tensor(np.stack(rows), dtype=self._dtype)
        x = x + self.position_weight * self._positional(len(tokens))
        x = nn.functional.normalize(x, dim=-1)
        scale = 1.0 / math.sqrt(self.dim)
        for li in range(self.n_layers):
            wq = getattr(self, f"wq_{li}")
            wk = getattr(self, f"wk_{li}")
            wv = getattr(self, f"wv_{li}")
            wo = getattr(self, f"wo_{li}")
            scores = (x @ wq) @ (x @ wk).T * scale
            attn = torch.softmax(scores, dim=-1)
            x = x + (attn @ (x @ wv)) @ wo
            x = nn.functional.normalize(x, dim=-1)
        return x

    def parameter_checksum(self) -> float:
        """Cheap fingerprint used to assert probing never mutates weights."""
        with torch.no_grad():
            return float(sum(p.double().abs().sum() for p in self.parameters()))
