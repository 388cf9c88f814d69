"""Linear-softmax autoregressive policy over the MiniQuery vocabulary.

Features for the next token are the one-hot encodings of the previous ``k``
context tokens (one block per offset) plus a one-hot position bucket, so the
logits are a sum of ``k + 1`` parameter rows. The prompt is simply the front
of the context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .lang import EOS_ID, TokenSeq

POSITION_BUCKETS = 64
INIT_SCALE = 0.05


def param_count(vocab_size: int, k: int) -> int:
    return (k * vocab_size + POSITION_BUCKETS) * vocab_size


@dataclass(eq=False)
class Policy:
    params: np.ndarray
    vocab_size: int
    k: int
    seed: int = 0

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (param_count(self.vocab_size, self.k),):
            raise ValueError(f"expected {param_count(self.vocab_size, self.k)} parameters, got {self.params.shape}")

    @property
    def weights(self) -> np.ndarray:
        """(k*V + POSITION_BUCKETS, V) view of the flat parameter vector."""
        return self.params.reshape(-1, self.vocab_size)

    def copy(self) -> "Policy":
        return Policy(self.params.copy(), self.vocab_size, self.k, self.seed)

    def with_params(self, params: np.ndarray) -> "Policy":
        return Policy(params, self.vocab_size, self.k, self.seed)


def init_policy(vocab_size: int, k: int = 8, seed: int = 0) -> Policy:
    if vocab_size < 2:
        raise ValueError("vocab_size must be at least 2")
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    params = rng.uniform(-INIT_SCALE, INIT_SCALE, size=param_count(vocab_size, k))
    return Policy(params, vocab_size, k, seed)


def _rows_for(policy: Policy, prompt_len: int, context: np.ndarray, gen_lo: int, gen_hi: int):
    """Row indices and mask for generated positions gen_lo..gen_hi-1."""
    V, k = policy.vocab_size, policy.k
    gen = np.arange(gen_lo, gen_hi)
    pos = prompt_len + gen
    offs = np.arange(1, k + 1)
    src = pos[:, None] - offs[None, :]
    valid = src >= 0
    if context.size:
        tok = context[np.where(valid, src, 0)]
    else:  # empty prompt, first step: every offset is masked
        tok = np.zeros_like(src)
    rows = np.empty((len(gen), k + 1), dtype=np.int64)
    rows[:, :k] = (offs[None, :] - 1) * V + tok
    rows[:, k] = k * V + np.minimum(gen, POSITION_BUCKETS - 1)
    return rows, valid


def _logits(W: np.ndarray, rows: np.ndarray, valid: np.ndarray) -> np.ndarray:
    # fixed accumulation order so single-step and batched scoring agree bitwise
    z = W[rows[:, -1]].copy()
    for j in range(rows.shape[1] - 1):
        z += W[rows[:, j]] * valid[:, j, None]
    return z


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _context(prompt: TokenSeq, seq: TokenSeq) -> np.ndarray:
    return np.asarray(prompt.ids + seq.ids, dtype=np.int64)


def log_probs(policy: Policy, prompt: TokenSeq, seq: TokenSeq) -> np.ndarray:
    """Full (L, V) log-softmax table for each generated position, teacher-forced."""
    ctx = _context(prompt, seq)
    rows, valid = _rows_for(policy, len(prompt), ctx, 0, len(seq))
    return _log_softmax(_logits(policy.weights, rows, valid))


def logprob(policy: Policy, prompt: TokenSeq, seq: TokenSeq) -> np.ndarray:
    """Per-token log pi(s_t | s_<t, prompt) for every generated token."""
    if len(seq) == 0:
        return np.zeros(0)
    table = log_probs(policy, prompt, seq)
    return table[np.arange(len(seq)), np.asarray(seq.ids)]


def grad_logprob(policy: Policy, prompt: TokenSeq, seq: TokenSeq, coefficients) -> np.ndarray:
    """Gradient of sum_t coefficients[t] * log pi(s_t | ...) w.r.t. the flat parameters."""
    coeff = np.asarray(coefficients, dtype=np.float64)
    if coeff.shape != (len(seq),):
        raise ValueError(f"need {len(seq)} coefficients, got shape {coeff.shape}")
    grad = np.zeros_like(policy.params)
    if len(seq) == 0:
        return grad
    G = grad.reshape(-1, policy.vocab_size)
    ctx = _context(prompt, seq)
    rows, valid = _rows_for(policy, len(prompt), ctx, 0, len(seq))
    probs = np.exp(_log_softmax(_logits(policy.weights, rows, valid)))
    delta = -coeff[:, None] * probs
    delta[np.arange(len(seq)), np.asarray(seq.ids)] += coeff
    np.add.at(G, rows[:, -1], delta)
    for j in range(policy.k):
        keep = valid[:, j]
        np.add.at(G, rows[keep, j], delta[keep])
    return grad


@dataclass
class Rollout:
    prompt_id: Optional[str]
    prompt: TokenSeq
    seq: TokenSeq
    logprobs_old: np.ndarray
    reward: Optional[object] = field(default=None)

    @property
    def truncated(self) -> bool:
        return self.seq.truncated


def _step(policy: Policy, prompt_len: int, ctx: list[int], t: int) -> np.ndarray:
    arr = np.asarray(ctx, dtype=np.int64)
    rows, valid = _rows_for(policy, prompt_len, arr, t, t + 1)
    return _log_softmax(_logits(policy.weights, rows, valid))[0]


def sample_rollout(policy: Policy, prompt: TokenSeq, t_max: int, temperature: float = 1.0,
                   rng: np.random.Generator | int | None = None, prompt_id: str | None = None) -> Rollout:
    """Ancestral sampling until EOS or ``t_max`` tokens.

    ``logprobs_old`` holds the untempered policy log-probabilities of the
    sampled tokens, which is what the importance ratio needs.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(rng)
    ctx = list(prompt.ids)
    out: list[int] = []
    lps: list[float] = []
    for t in range(t_max):
        lp = _step(policy, len(prompt), ctx, t)
        if temperature == 1.0:
            probs = np.exp(lp)
        else:
            probs = np.exp(_log_softmax(lp / temperature))
        cdf = np.cumsum(probs)
        tok = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        tok = min(tok, policy.vocab_size - 1)
        out.append(tok)
        lps.append(float(lp[tok]))
        ctx.append(tok)
        if tok == EOS_ID:
            break
    truncated = out[-1] != EOS_ID
    return Rollout(prompt_id, prompt, TokenSeq(tuple(out), truncated), np.asarray(lps))


def greedy_decode(policy: Policy, prompt: TokenSeq, t_max: int) -> TokenSeq:
    ctx = list(prompt.ids)
    out: list[int] = []
    for t in range(t_max):
        tok = int(np.argmax(_step(policy, len(prompt), ctx, t)))
        out.append(tok)
        ctx.append(tok)
        if tok == EOS_ID:
            return TokenSeq(tuple(out), False)
    return TokenSeq(tuple(out), True)


def save_checkpoint(policy: Policy, path) -> None:
    header = {"vocab_size": policy.vocab_size, "k": policy.k,
              "param_count": int(policy.params.size), "seed": policy.seed}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(policy.params.astype("<f8").tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> Policy:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError("checkpoint has no JSON header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
        vocab_size, k, count = int(header["vocab_size"]), int(header["k"]), int(header["param_count"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from None
    if count != param_count(vocab_size, k):
        raise CheckpointError(f"param_count {count} does not match vocab_size={vocab_size}, k={k}")
    body = raw[nl + 1:]
    if len(body) != 8 * count:
        raise CheckpointError(f"expected {8 * count} parameter bytes, found {len(body)}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return Policy(params, vocab_size, k, int(header.get("seed", 0)))
