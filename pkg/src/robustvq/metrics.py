"""Bits-per-dimension and NELBO arithmetic, and the per-evaluation metrics record."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

__all__ = ["MetricsRow", "CSV_HEADER", "bpd", "nelbo_uniform", "nelbo_unigram"]

CSV_HEADER = "iteration,task_loss,bpd,perplexity,used_tokens,nelbo_uniform,nelbo_unigram"


def bpd(nll_nats: float, dims: int) -> float:
    """Negative log-likelihood in nats converted to bits per data dimension."""
    if dims <= 0:
        raise ValueError("dims must be positive")
    return nll_nats / (dims * math.log(2.0))


def nelbo_uniform(bpd_value: float, K: float, dims_per_latent: float) -> float:
    """BPD plus the cost of sending one latent under a uniform prior over K codes,
    amortized over the data dimensions that latent covers."""
    if K < 1 or dims_per_latent <= 0:
        raise ValueError("need K >= 1 and dims_per_latent > 0")
    return bpd_value + math.log2(K) / dims_per_latent


def nelbo_unigram(bpd_value: float, perplexity: float, dims_per_latent: float) -> float:
    """Same as :func:`nelbo_uniform` but charging log2(perplexity) bits per latent."""
    if perplexity < 1 or dims_per_latent <= 0:
        raise ValueError("need perplexity >= 1 and dims_per_latent > 0")
    return bpd_value + math.log2(perplexity) / dims_per_latent


@dataclass
class MetricsRow:
    iteration: int
    task_loss: float
    bpd: float | None = None
    perplexity: float | None = None
    used_tokens: int | None = None
    nelbo_uniform: float | None = None
    nelbo_unigram: float | None = None

    def to_csv(self) -> str:
        """One CSV line; ``None`` becomes an empty field, floats use ``repr``."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
        return ",".join(out)

    @classmethod
    def from_csv(cls, line: str) -> "MetricsRow":
        parts = line.rstrip("\n").split(",")
        kw = {}
        for f, raw in zip(fields(cls), parts):
            if raw == "":
                kw[f.name] = None
            elif f.name in ("iteration", "used_tokens"):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = float(raw)
        return cls(**kw)
