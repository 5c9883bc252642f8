"""Tiny differentiable autoregressive policy.

Embedding + one causal attention/MLP mixing layer + output projection,
float64 throughout, with hand-written exact backward. The same parameter
container serves as student and (via freeze) as the immutable self-teacher.
Checkpoints use a documented flat binary layout with a trailing integrity
digest so teacher checksums are auditable.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from .distributions import TokenDistribution
from .errors import (
    ContextLengthError,
    DegenerateInputError,
    DomainError,
    UsageError,
)
from .rollout import Rollout, SequenceContext
from .seeding import spawn_rng
from .vocab import EOS, VOCAB


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int = VOCAB.size
    d_model: int = 64
    n_heads: int = 4
    hidden: int = 128
    rel_buckets: int = 32
    max_len: int = 256

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass
class PolicyParams:
    config: PolicyConfig
    emb: np.ndarray
    pos: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    rel: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wout: np.ndarray
    bout: np.ndarray

    def kernel_args(self) -> tuple:
        return tuple(getattr(self, name) for name in K.KERNEL_ARG_ORDER)

    def array_items(self):
        for name in K.KERNEL_ARG_ORDER:
            yield name, getattr(self, name)

    def num_params(self) -> int:
        return sum(arr.size for _, arr in self.array_items())

    def copy(self) -> "PolicyParams":
        return replace(self, **{n: a.copy() for n, a in self.array_items()})


def init_policy(config: PolicyConfig = PolicyConfig(), seed: int = 0) -> PolicyParams:
    rng = spawn_rng(seed, "init")
    d, h, v = config.d_model, config.hidden, config.vocab_size
    w_scale = 1.0 / np.sqrt(d)

    def w(*shape, scale):
        return rng.normal(0.0, scale, size=shape)

    return PolicyParams(
        config=config,
        emb=w(v, d, scale=0.4),
        pos=w(config.max_len, d, scale=0.2),
        wq=w(d, d, scale=w_scale), bq=np.zeros(d),
        wk=w(d, d, scale=w_scale),
        wv=w(d, d, scale=w_scale), bv=np.zeros(d),
        wo=w(d, d, scale=w_scale), bo=np.zeros(d),
        rel=np.zeros((config.n_heads, config.rel_buckets)),
        w1=w(d, h, scale=w_scale), b1=np.zeros(h),
        w2=w(h, d, scale=1.0 / np.sqrt(h)), b2=np.zeros(d),
        wout=w(d, v, scale=w_scale), bout=np.zeros(v),
    )


@dataclass(frozen=True)
class PolicySnapshot:
    """Immutable frozen copy of a parameter set; the self-teacher."""

    params: PolicyParams
    checksum: str

    @property
    def config(self) -> PolicyConfig:
        return self.params.config


def _params_of(model) -> PolicyParams:
    return model.params if isinstance(model, PolicySnapshot) else model


def _check_ids(params: PolicyParams, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise DegenerateInputError("context is empty")
    if ids.size > params.config.max_len:
        raise ContextLengthError(
            f"context length {ids.size} exceeds maximum {params.config.max_len}"
        )
    return ids


def sequence_logits(model, ids) -> np.ndarray:
    """Next-token logits at every position (no gradients)."""
    params = _params_of(model)
    return K.logits_all(*params.kernel_args(), _check_ids(params, ids))


def last_logits(model, ids) -> np.ndarray:
    params = _params_of(model)
    return K.logits_last(*params.kernel_args(), _check_ids(params, ids))


def next_token_distribution(
    model, ctx: SequenceContext, temperature: float = 1.0
) -> TokenDistribution:
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    return TokenDistribution.from_logits(
        last_logits(model, ctx.ids), temperature=temperature
    )


def forward_cache(params: PolicyParams, ids) -> tuple[np.ndarray, dict]:
    """Forward pass retaining intermediates for backward (reference backend)."""
    return K.forward_with_cache(*params.kernel_args(), _check_ids(params, ids))


def backward(params: PolicyParams, cache: dict, d_logits: np.ndarray) -> dict:
    """Exact parameter gradients of sum(d_logits * logits)."""
    if not isinstance(cache, dict) or "ids" not in cache:
        raise UsageError("backward called without a forward cache")
    if d_logits.shape[0] != cache["ids"].shape[0]:
        raise UsageError("d_logits length does not match the cached forward pass")
    return K.backward(*params.kernel_args(), cache, d_logits)


def sample_rollout(
    model,
    prompt: SequenceContext,
    temperature: float,
    max_len: int,
    seed,
    blocked_ids: tuple[int, ...] | None = None,
) -> Rollout:
    """Ancestral sampling until EOS or max_len.

    Teacher-only ids are masked from the sampling support; each sampled
    token's log-probability is recorded under the masked, temperature-scaled
    distribution it was drawn from.
    """
    if max_len < 1:
        raise DomainError(f"max_len must be >= 1, got {max_len}")
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    params = _params_of(model)
    if blocked_ids is None:
        blocked_ids = VOCAB.privileged_ids()
    blocked = np.asarray(blocked_ids, dtype=np.int64)
    rng = spawn_rng(seed, "rollout")

    ids = list(prompt.ids)
    tokens: list[int] = []
    log_probs: list[float] = []
    truncated = True
    for _ in range(max_len):
        logits = last_logits(params, ids)
        z = logits / temperature
        z[blocked] = -np.inf
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        u = rng.random()
        tok = int(min(np.searchsorted(np.cumsum(p), u, side="right"), p.size - 1))
        tokens.append(tok)
        log_probs.append(float(np.log(p[tok])))
        ids.append(tok)
        if tok == EOS:
            truncated = False
            break
        if len(ids) >= params.config.max_len:
            break  # model context budget exhausted; counts as truncated

    return Rollout(
        prompt=tuple(prompt.ids),
        tokens=tuple(tokens),
        student_log_probs=np.asarray(log_probs),
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# Checkpoints.
#
# Flat binary layout, little-endian:
#   magic  b"OPLC"
#   u32    format version (1)
#   u32 x6 config: vocab_size, d_model, n_heads, hidden, rel_buckets, max_len
#   u32    array count
#   per array, in KERNEL_ARG_ORDER:
#     u16    name length, then ascii name
#     u8     ndim, then u32 per dim
#     f64 x prod(dims), row-major values
#   32 raw bytes: sha256 of everything above
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"OPLC"
CHECKPOINT_VERSION = 1


def _serialize(params: PolicyParams) -> bytes:
    cfg = params.config
    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    out.append(struct.pack("<6I", cfg.vocab_size, cfg.d_model, cfg.n_heads,
                           cfg.hidden, cfg.rel_buckets, cfg.max_len))
    arrays = list(params.array_items())
    out.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        encoded = name.encode("ascii")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def params_checksum(params: PolicyParams) -> str:
    return hashlib.sha256(_serialize(params)).hexdigest()


def freeze(params: PolicyParams) -> PolicySnapshot:
    """Deep immutable copy; later updates to `params` cannot alter it."""
    frozen = params.copy()
    for _, arr in frozen.array_items():
        arr.flags.writeable = False
    return PolicySnapshot(params=frozen, checksum=params_checksum(frozen))


def save_checkpoint(params: PolicyParams, path) -> str:
    payload = _serialize(params)
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(digest)
    return digest.hex()


def load_checkpoint(path) -> PolicyParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise DomainError(f"checkpoint integrity check failed: {path}")
    off = 0

    def take(n):
        nonlocal off
        chunk = payload[off : off + n]
        off += n
        return chunk

    if take(4) != CHECKPOINT_MAGIC:
        raise DomainError(f"not a policy checkpoint: {path}")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise DomainError(f"unsupported checkpoint version {version}")
    cfg = PolicyConfig(*struct.unpack("<6I", take(24)))
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("ascii")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).copy()
    return PolicyParams(config=cfg, **arrays)


def forward_cache_batch(params: PolicyParams, ids) -> tuple[np.ndarray, dict]:
    """Batched cached forward over [B, L] ids padded at the tail."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise DegenerateInputError("batch of contexts must be 2-D and nonempty")
    if ids.shape[1] > params.config.max_len:
        raise ContextLengthError(
            f"context length {ids.shape[1]} exceeds maximum {params.config.max_len}"
        )
    return K.forward_with_cache_batch(*params.kernel_args(), ids)


def backward_batch(params: PolicyParams, cache: dict, d_logits: np.ndarray) -> dict:
    """Batched exact parameter gradients of sum(d_logits * logits)."""
    if not isinstance(cache, dict) or "ids" not in cache:
        raise UsageError("backward called without a forward cache")
    if d_logits.shape[:2] != cache["ids"].shape:
        raise UsageError("d_logits shape does not match the cached forward pass")
    return K.backward_batch(*params.kernel_args(), cache, d_logits)
