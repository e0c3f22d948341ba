"""Per-decoder-layer expert banks and the Gumbel-Max routing scheme.

Each expert is a layer-normalized FFN with a residual connection:
o = FFN(LN(z)) + z.  The second FFN projection starts at zero so every
expert is the identity map at initialization, making the expert stage a
strict refinement of the backbone.

Routing is sentence-level: one category per sentence per forward pass,
shared across all decoder layers (configurable to per-layer sampling).
During training the category is sampled from softmax(topk(s)/tau) via
Gumbel perturbation; at inference k=1 shuts the sampling down (argmax).
"""

from dataclasses import dataclass

import numpy as np

from .model import FeedForward, LayerNorm
from .tensor import Tensor


@dataclass
class RoutingDecision:
    sentence_id: int
    chosen: int
    candidates: list
    probs: list
    mode: str  # "sampled" | "argmax"

    def to_json_obj(self):
        return {"sentence_id": self.sentence_id, "mode": self.mode,
                "candidates": self.candidates, "p": self.probs,
                "chosen": self.chosen}


class Expert:
    def __init__(self, d, inner, rng):
        self.ln = LayerNorm(d)
        self.ffn = FeedForward(d, inner, rng)
        # identity at init: zero the second projection
        self.ffn.lin2.W.data[:] = 0.0

    def __call__(self, z):
        return self.ffn(self.ln(z)) + z

    def named_params(self, prefix):
        out = self.ln.named_params(f"{prefix}.ln")
        out.update(self.ffn.named_params(f"{prefix}.ffn"))
        return out


class ExpertBank:
    def __init__(self, num_layers, num_experts, d, inner, rng):
        self.num_layers = num_layers
        self.num_experts = num_experts
        self.experts = [[Expert(d, inner, rng) for _ in range(num_experts)]
                        for _ in range(num_layers)]

    def forward(self, z, layer, expert):
        if not 0 <= expert < self.num_experts:
            raise IndexError(f"expert index {expert} out of range [0, {self.num_experts})")
        if not 0 <= layer < self.num_layers:
            raise IndexError(f"layer index {layer} out of range [0, {self.num_layers})")
        return self.experts[layer][expert](z)

    def apply(self, z, layer, onehot):
        """Apply the per-sentence hard assignment `onehot` (B, K) at `layer`.

        Unused experts are skipped; gradients flow only into selected ones.
        """
        b = z.shape[0]
        total = None
        for e in range(self.num_experts):
            w = onehot[:, e]
            if not w.any():
                continue
            term = self.forward(z, layer, e) * Tensor(w.reshape(b, 1, 1))
            total = term if total is None else total + term
        if total is None:
            raise ValueError("expert assignment selects no expert")
        return total

    def named_params(self):
        out = {}
        for li, layer in enumerate(self.experts):
            for ei, ex in enumerate(layer):
                out.update(ex.named_params(f"expert.{li}.{ei}"))
        return out


def _softmax1d(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def gumbel_topk_sample(scores, k, tau, rng, n_draws=1):
    """Vectorized Gumbel-Max sampling from softmax(topk(scores)/tau).

    Returns (chosen indices (n_draws,), candidate indices (k,), probs (k,)).
    Ties in the top-k cut are broken toward lower indices.
    """
    scores = np.asarray(scores, dtype=np.float64)
    kk = scores.shape[0]
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if not 1 <= k <= kk:
        raise ValueError(f"k={k} outside [1, {kk}]")
    if k <= 1:
        chosen = int(np.argmax(scores))
        return (np.full(n_draws, chosen, dtype=np.int64),
                np.array([chosen]), np.array([1.0]))
    # stable sort on (-score, index) gives lowest-index tie-breaking
    order = np.argsort(-scores, kind="stable")
    cand = np.sort(order[:k])  # candidate set; membership is what matters
    probs = _softmax1d(scores[cand] / tau)
    g = rng.gumbel((n_draws, k))
    picks = np.argmax(np.log(probs)[None, :] + g, axis=1)
    return cand[picks], cand, probs


def gumbel_max_route(scores, k, tau, rng, sentence_id=0):
    """One routing decision for one sentence (Gumbel-Max top-k)."""
    chosen, cand, probs = gumbel_topk_sample(scores, k, tau, rng)
    mode = "argmax" if k <= 1 else "sampled"
    return RoutingDecision(sentence_id, int(chosen[0]),
                           [int(c) for c in cand],
                           [float(p) for p in probs], mode)


def inference_route(scores):
    """Deterministic argmax routing, ties to the lowest index."""
    return int(np.argmax(scores))
