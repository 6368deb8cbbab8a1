"""Frozen synthetic text encoder, trainable prompts, and the logit head.

The encoder is the simplest frozen differentiable stand-in that preserves the
"frozen encoder, trainable tokens" contract: mean-pool the context tokens and
the class token, apply a fixed linear projection, L2-normalize. Prompt
contexts are the complete trainable parameter set of the artifact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericsError
from .seeding import DOMAIN_ENCODER, DOMAIN_PROMPT, substream, unit_rows

MODE_CLASS_SPECIFIC = "class_specific"
MODE_SHARED = "shared"

# PRNG streams.
_STREAM_PROJECTION = 0  # DOMAIN_ENCODER
_STREAM_CLASS_TOKENS = 1  # DOMAIN_ENCODER
_STREAM_CONTEXT_INIT = 0  # DOMAIN_PROMPT
_STREAM_TEMPLATE = 1  # DOMAIN_PROMPT


@dataclass(frozen=True)
class FrozenTextEncoder:
    """Fixed linear map from token space (d_token) to embedding space (d).

    projection has shape (d_token, d) and is applied as pooled @ projection;
    it never receives gradient updates.
    """

    projection: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        proj = np.asarray(self.projection, dtype=np.float64)
        if proj.ndim != 2:
            raise ConfigError("projection must be a 2-d matrix")
        proj.flags.writeable = False
        object.__setattr__(self, "projection", proj)

    @property
    def token_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def dim(self) -> int:
        return self.projection.shape[1]

    @staticmethod
    def create(seed: int, token_dim: int, dim: int) -> "FrozenTextEncoder":
        """Random dense projection, deterministic from seed. Entries are scaled
        by 1/sqrt(d_token) so projected vectors stay O(1)."""
        rng = substream(seed, DOMAIN_ENCODER, _STREAM_PROJECTION)
        proj = rng.standard_normal((token_dim, dim)) / np.sqrt(token_dim)
        return FrozenTextEncoder(proj, seed=seed)

    @staticmethod
    def identity(dim: int) -> "FrozenTextEncoder":
        return FrozenTextEncoder(np.eye(dim), seed=None)


def make_class_tokens(encoder_seed: int, num_classes: int, token_dim: int) -> np.ndarray:
    """Frozen per-class tokens: unit rows drawn from the encoder's seed on a
    separate stream, so class identities are distinguishable but fixed."""
    rng = substream(encoder_seed, DOMAIN_ENCODER, _STREAM_CLASS_TOKENS)
    return unit_rows(rng, num_classes, token_dim)


def template_vector(encoder_seed: int, token_dim: int) -> np.ndarray:
    """The fixed shared context vector used by init="template" (the stand-in
    for a hand-written prompt prefix)."""
    rng = substream(encoder_seed, DOMAIN_PROMPT, _STREAM_TEMPLATE)
    return unit_rows(rng, 1, token_dim)[0]


@dataclass
class PromptSet:
    """Trainable context tokens plus frozen class tokens.

    contexts has shape (C, M, d_token) in class_specific mode or (1, M, d_token)
    in shared mode (one block broadcast to every class). class_tokens never
    receive gradients.
    """

    contexts: np.ndarray
    class_tokens: np.ndarray
    mode: str = MODE_CLASS_SPECIFIC
    encoder_seed: int | None = None

    def __post_init__(self):
        self.contexts = np.asarray(self.contexts, dtype=np.float64)
        tokens = np.asarray(self.class_tokens, dtype=np.float64)
        tokens.flags.writeable = False
        self.class_tokens = tokens
        if self.mode not in (MODE_CLASS_SPECIFIC, MODE_SHARED):
            raise ConfigError(f"unknown prompt mode {self.mode!r}")
        if self.contexts.ndim != 3 or self.class_tokens.ndim != 2:
            raise ConfigError("contexts must be (C or 1, M, d_token); class_tokens (C, d_token)")
        if self.num_context_tokens < 1:
            raise ConfigError("need M >= 1 context tokens")
        if self.contexts.shape[2] != self.class_tokens.shape[1]:
            raise ConfigError("contexts and class_tokens must share d_token")
        expected = 1 if self.mode == MODE_SHARED else self.num_classes
        if self.contexts.shape[0] != expected:
            raise ConfigError(
                f"mode {self.mode} expects a context block of {expected} rows, "
                f"got {self.contexts.shape[0]}"
            )

    @property
    def num_classes(self) -> int:
        return self.class_tokens.shape[0]

    @property
    def num_context_tokens(self) -> int:
        return self.contexts.shape[1]

    @property
    def token_dim(self) -> int:
        return self.class_tokens.shape[1]


def init_prompt_set(
    num_classes: int,
    token_dim: int,
    num_context_tokens: int = 4,
    mode: str = MODE_CLASS_SPECIFIC,
    init: str = "gaussian",
    init_std: float = 0.02,
    encoder_seed: int = 0,
    init_seed: int = 0,
) -> PromptSet:
    """Build a fresh PromptSet: frozen class tokens from the encoder seed,
    contexts from init_seed (zero-mean Gaussian) or the fixed template vector."""
    blocks = 1 if mode == MODE_SHARED else num_classes
    shape = (blocks, num_context_tokens, token_dim)
    if init == "gaussian":
        rng = substream(init_seed, DOMAIN_PROMPT, _STREAM_CONTEXT_INIT)
        contexts = init_std * rng.standard_normal(shape)
    elif init == "template":
        contexts = np.broadcast_to(template_vector(encoder_seed, token_dim), shape).copy()
    else:
        raise ConfigError(f"unknown prompt init {init!r}")
    tokens = make_class_tokens(encoder_seed, num_classes, token_dim)
    return PromptSet(contexts, tokens, mode=mode, encoder_seed=encoder_seed)


@dataclass(frozen=True)
class PromptEncoding:
    """Forward cache of encode_all: unit embeddings plus the pre-normalization
    vectors and norms the backward pass needs."""

    embeddings: np.ndarray  # (C, d) unit rows
    pre_norm: np.ndarray  # (C, d)
    norms: np.ndarray  # (C,)


def encode_all(encoder: FrozenTextEncoder, prompts: PromptSet) -> PromptEncoding:
    """Embed every class prompt: pool the M contexts with the class token
    (divide by M+1), project, normalize."""
    if prompts.token_dim != encoder.token_dim:
        raise ConfigError("prompt token_dim does not match encoder token_dim")
    m = prompts.num_context_tokens
    pooled = (prompts.contexts.sum(axis=1) + prompts.class_tokens) / (m + 1.0)
    pre = pooled @ encoder.projection  # (C, d)
    norms = np.linalg.norm(pre, axis=1)
    if norms.min() < 1e-12:
        raise NumericsError("degenerate prompt embedding: zero vector before normalization")
    return PromptEncoding(pre / norms[:, None], pre, norms)


def encode_prompt(encoder: FrozenTextEncoder, prompts: PromptSet, class_index: int) -> np.ndarray:
    if not 0 <= class_index < prompts.num_classes:
        raise ConfigError(f"class index {class_index} out of range")
    return encode_all(encoder, prompts).embeddings[class_index]


def encode_backward(
    encoder: FrozenTextEncoder,
    prompts: PromptSet,
    encoding: PromptEncoding,
    grad_embeddings: np.ndarray,
) -> np.ndarray:
    """Chain a gradient w.r.t. the unit prompt embeddings back to contexts.

    Per class: g_u = (I - e e^T) g_e / |u|, then through the fixed projection
    and the mean pool. Returns an array shaped like prompts.contexts; in shared
    mode the per-class contributions accumulate into the single block.
    """
    e = encoding.embeddings
    radial = (e * grad_embeddings).sum(axis=1, keepdims=True)
    g_pre = (grad_embeddings - e * radial) / encoding.norms[:, None]
    g_pooled = g_pre @ encoder.projection.T  # (C, d_token)
    m = prompts.num_context_tokens
    per_token = g_pooled / (m + 1.0)
    if prompts.mode == MODE_SHARED:
        block = per_token.sum(axis=0)
        return np.tile(block, (1, m, 1))
    return np.repeat(per_token[:, None, :], m, axis=1)


@dataclass(frozen=True)
class LogitHead:
    """Cosine-similarity logits with a fixed temperature."""

    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")

    def logits(self, image_embeddings: np.ndarray, prompt_embeddings: np.ndarray) -> np.ndarray:
        return logits(image_embeddings, prompt_embeddings, self.temperature)


def logits(image_embeddings: np.ndarray, prompt_embeddings: np.ndarray, tau: float) -> np.ndarray:
    """z_i = cos(prompt_i, image)/tau. Accepts one (d,) image or a (B, d) stack."""
    if tau <= 0:
        raise ConfigError("temperature must be > 0")
    return np.asarray(image_embeddings) @ np.asarray(prompt_embeddings).T / tau


def predict_softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over classes with max-subtraction for stability."""
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise NumericsError("softmax input must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    expz = np.exp(shifted)
    return expz / expz.sum(axis=-1, keepdims=True)


def prompts_to_dict(prompts: PromptSet) -> dict:
    return {
        "mode": prompts.mode,
        "num_context_tokens": prompts.num_context_tokens,
        "token_dim": prompts.token_dim,
        "contexts": prompts.contexts.tolist(),
        "class_tokens": prompts.class_tokens.tolist(),
        "encoder_seed": prompts.encoder_seed,
    }


def prompts_from_dict(doc: dict) -> PromptSet:
    try:
        prompts = PromptSet(
            np.asarray(doc["contexts"], dtype=np.float64),
            np.asarray(doc["class_tokens"], dtype=np.float64),
            mode=doc["mode"],
            encoder_seed=doc["encoder_seed"],
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"prompt checkpoint missing field: {exc}") from exc
    if prompts.num_context_tokens != doc.get("num_context_tokens"):
        raise ConfigError("prompt checkpoint header disagrees with its contexts")
    if prompts.token_dim != doc.get("token_dim"):
        raise ConfigError("prompt checkpoint header disagrees with its token_dim")
    return prompts


def save_prompts(prompts: PromptSet, path) -> None:
    Path(path).write_text(json.dumps(prompts_to_dict(prompts), separators=(",", ":")) + "\n")


def load_prompts(path) -> PromptSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"prompt checkpoint is not valid JSON: {exc}") from exc
    return prompts_from_dict(doc)
