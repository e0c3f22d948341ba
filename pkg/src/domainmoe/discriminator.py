"""Domain discriminator: category scores from pooled encoder states.

s = tanh(pool(h) W1 + b1) W2 + b2, trained by distilling hard cluster
labels through a K-way cross-entropy while everything upstream stays
frozen.
"""

import numpy as np

from .model import Linear
from .tensor import DimensionError, Tensor, cross_entropy, no_grad, tanh


def pool(h, pad_mask=None):
    """Mean of hidden states over non-pad positions.

    h: Tensor (B, n, d); pad_mask: (B, n) bool, True = real token.
    """
    b, n, d = h.shape
    if pad_mask is None:
        pad_mask = np.ones((b, n), dtype=bool)
    counts = pad_mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("pool() needs at least one non-pad position per sentence")
    masked = h * Tensor(pad_mask[:, :, None].astype(h.dtype))
    return masked.sum(axis=1) * Tensor((1.0 / counts)[:, None].astype(h.dtype))


class Discriminator:
    def __init__(self, d, num_categories, rng):
        self.d = d
        self.num_categories = num_categories
        self.lin1 = Linear(d, d, rng)
        self.lin2 = Linear(d, num_categories, rng)

    def score(self, feature):
        """Category scores, (B, K) for (B, d) pooled features."""
        if feature.shape[-1] != self.d:
            raise DimensionError(
                f"feature width {feature.shape[-1]} does not match model dim {self.d}")
        return self.lin2(tanh(self.lin1(feature)))

    def probs(self, feature):
        from .tensor import softmax
        return softmax(self.score(feature), axis=-1)

    def loss(self, features, labels):
        """Distillation objective: K-way cross-entropy against hard labels."""
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and labels.max() >= self.num_categories:
            raise IndexError(
                f"label {labels.max()} out of range for K={self.num_categories}")
        scores = self.score(features)
        n = scores.shape[0]
        return cross_entropy(scores, labels) * (1.0 / max(n, 1))

    def named_params(self):
        out = self.lin1.named_params("disc.lin1")
        out.update(self.lin2.named_params("disc.lin2"))
        return out


def encode_features(model, pairs, batch_size=64):
    """Pooled encoder features for a list of corpus pairs (frozen forward)."""
    from .corpus import PAD
    feats = []
    with no_grad():
        for lo in range(0, len(pairs), batch_size):
            chunk = pairs[lo:lo + batch_size]
            srcs = [model.truncate(p[0]) for p in chunk]
            n = max(len(s) for s in srcs)
            src = np.full((len(chunk), n), PAD, dtype=np.int64)
            for i, s in enumerate(srcs):
                src[i, :len(s)] = s
            mask = src != PAD
            h = model.encode(src, mask)
            feats.append(pool(h, mask).data.copy())
    return np.concatenate(feats, axis=0)


def classify(scores):
    """Category decision from a score vector: argmax, ties to lowest index."""
    scores = np.asarray(scores)
    return int(np.argmax(scores))
