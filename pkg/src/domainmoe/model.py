"""Encoder-decoder translation backbone.

Pre-norm transformer with fixed sinusoidal positions, Xavier-uniform
projections and N(0, d^-0.5) embeddings.  Decoder layer outputs are the
attachment points for the per-layer expert banks; encoder hidden states
feed both cross-attention and the domain discriminator.
"""

import logging
import math

import numpy as np

from .corpus import BOS, EOS, PAD
from .tensor import Tensor, cross_entropy, layer_norm, no_grad, relu, softmax

log = logging.getLogger(__name__)

NEG_INF = -1e9


class Linear:
    def __init__(self, d_in, d_out, rng, zero=False):
        if zero:
            w = np.zeros((d_in, d_out))
        else:
            limit = math.sqrt(6.0 / (d_in + d_out))
            w = rng.uniform((d_in, d_out)) * 2 * limit - limit
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x):
        return x @ self.W + self.b

    def named_params(self, prefix):
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, d):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias)

    def named_params(self, prefix):
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class MultiHeadAttention:
    def __init__(self, d, heads, rng):
        self.d, self.heads, self.dh = d, heads, d // heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def __call__(self, queries, keys, values, add_mask):
        """add_mask: ndarray broadcastable to (B, H, n_q, n_k), 0 or NEG_INF."""
        b, nq, d = queries.shape
        nk = keys.shape[1]

        def split(x, n):
            return x.reshape(b, n, self.heads, self.dh).transpose(0, 2, 1, 3)

        q = split(self.q(queries), nq)
        k = split(self.k(keys), nk)
        v = split(self.v(values), nk)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.dh))
        if add_mask is not None:
            scores = scores + Tensor(add_mask)
        attn = softmax(scores, axis=-1)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, nq, d)
        return self.o(ctx)

    def named_params(self, prefix):
        out = {}
        for name, lin in (("q", self.q), ("k", self.k), ("v", self.v), ("o", self.o)):
            out.update(lin.named_params(f"{prefix}.{name}"))
        return out


class FeedForward:
    def __init__(self, d, d_inner, rng):
        self.lin1 = Linear(d, d_inner, rng)
        self.lin2 = Linear(d_inner, d, rng)

    def __call__(self, x):
        return self.lin2(relu(self.lin1(x)))

    def named_params(self, prefix):
        out = self.lin1.named_params(f"{prefix}.lin1")
        out.update(self.lin2.named_params(f"{prefix}.lin2"))
        return out


class EncoderLayer:
    def __init__(self, d, heads, ffn_dim, rng):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn_dim, rng)

    def __call__(self, x, src_mask):
        h = self.ln1(x)
        x = x + self.attn(h, h, h, src_mask)
        x = x + self.ffn(self.ln2(x))
        return x

    def named_params(self, prefix):
        out = {}
        for name, mod in (("ln1", self.ln1), ("attn", self.attn),
                          ("ln2", self.ln2), ("ffn", self.ffn)):
            out.update(mod.named_params(f"{prefix}.{name}"))
        return out


class DecoderLayer:
    def __init__(self, d, heads, ffn_dim, rng):
        self.ln1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.ln3 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn_dim, rng)

    def __call__(self, x, enc_out, self_mask, cross_mask):
        h = self.ln1(x)
        x = x + self.self_attn(h, h, h, self_mask)
        x = x + self.cross_attn(self.ln2(x), enc_out, enc_out, cross_mask)
        x = x + self.ffn(self.ln3(x))
        return x

    def named_params(self, prefix):
        out = {}
        for name, mod in (("ln1", self.ln1), ("self_attn", self.self_attn),
                          ("ln2", self.ln2), ("cross_attn", self.cross_attn),
                          ("ln3", self.ln3), ("ffn", self.ffn)):
            out.update(mod.named_params(f"{prefix}.{name}"))
        return out


def sinusoidal_positions(max_len, d):
    pos = np.arange(max_len)[:, None]
    i = np.arange(d // 2)[None, :]
    angles = pos / np.power(10000.0, 2 * i / d)
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


class TransformerModel:
    def __init__(self, config, rng):
        config.validate()
        if config.src_vocab_size < 1 or config.tgt_vocab_size < 1:
            raise ValueError("vocab sizes must be set before building the model")
        self.config = config
        d = config.model_dim
        self.src_embed = Tensor(
            rng.normal((config.src_vocab_size, d), std=d ** -0.5), requires_grad=True)
        self.tgt_embed = Tensor(
            rng.normal((config.tgt_vocab_size, d), std=d ** -0.5), requires_grad=True)
        self.pos = sinusoidal_positions(config.max_len, d)
        self.enc_layers = [EncoderLayer(d, config.num_heads, config.ffn_dim, rng)
                           for _ in range(config.num_layers)]
        self.dec_layers = [DecoderLayer(d, config.num_heads, config.ffn_dim, rng)
                           for _ in range(config.num_layers)]
        self.enc_norm = LayerNorm(d)
        self.dec_norm = LayerNorm(d)
        self.out_proj = Linear(d, config.tgt_vocab_size, rng)
        self.scale = math.sqrt(d)

    def named_params(self):
        out = {"src_embed": self.src_embed, "tgt_embed": self.tgt_embed}
        for i, layer in enumerate(self.enc_layers):
            out.update(layer.named_params(f"enc.{i}"))
        for i, layer in enumerate(self.dec_layers):
            out.update(layer.named_params(f"dec.{i}"))
        out.update(self.enc_norm.named_params("enc_norm"))
        out.update(self.dec_norm.named_params("dec_norm"))
        out.update(self.out_proj.named_params("out_proj"))
        return out

    # -- forward ---------------------------------------------------------
    def _embed(self, table, ids):
        from .tensor import embedding
        n = ids.shape[1]
        x = embedding(table, ids) * self.scale
        return x + Tensor(self.pos[:n])

    def truncate(self, ids):
        if len(ids) > self.config.max_len:
            log.warning("input of %d tokens truncated to max_len=%d",
                        len(ids), self.config.max_len)
            return ids[:self.config.max_len]
        return ids

    def encode(self, src_ids, src_pad_mask=None):
        """src_ids: (B, n) int array. Returns (B, n, d) hidden states."""
        src_ids = np.asarray(src_ids)
        if src_ids.ndim != 2 or src_ids.shape[1] < 1:
            raise ValueError(f"encode expects a non-empty (B, n) batch, got {src_ids.shape}")
        if src_pad_mask is None:
            src_pad_mask = src_ids != PAD
        add_mask = np.where(src_pad_mask, 0.0, NEG_INF)[:, None, None, :]
        x = self._embed(self.src_embed, src_ids)
        for layer in self.enc_layers:
            x = layer(x, add_mask)
        return self.enc_norm(x)

    def decode_logits(self, enc_out, src_pad_mask, tgt_in_ids,
                      expert_bank=None, expert_onehot=None):
        """Logits (B, m, V) for teacher-forced target inputs.

        expert_onehot: optional (B, K) or (L, B, K) hard assignment applied
        after each decoder layer via expert_bank.
        """
        tgt_in_ids = np.asarray(tgt_in_ids)
        b, m = tgt_in_ids.shape
        causal = np.triu(np.full((m, m), NEG_INF), k=1)[None, None, :, :]
        tgt_key_mask = np.where(tgt_in_ids != PAD, 0.0, NEG_INF)[:, None, None, :]
        self_mask = causal + tgt_key_mask
        cross_mask = np.where(src_pad_mask, 0.0, NEG_INF)[:, None, None, :]
        x = self._embed(self.tgt_embed, tgt_in_ids)
        for i, layer in enumerate(self.dec_layers):
            x = layer(x, enc_out, self_mask, cross_mask)
            if expert_bank is not None and expert_onehot is not None:
                onehot = expert_onehot[i] if expert_onehot.ndim == 3 else expert_onehot
                x = expert_bank.apply(x, i, onehot)
        return self.out_proj(self.dec_norm(x))

    def loss_batch(self, batch, expert_bank=None, expert_onehot=None):
        """Per-token mean cross-entropy on a padded batch.

        batch: dict with src (B,n), tgt_in (B,m), tgt_out (B,m) int arrays.
        Returns (loss tensor, non-pad token count).
        """
        src, tgt_in, tgt_out = batch["src"], batch["tgt_in"], batch["tgt_out"]
        src_pad_mask = src != PAD
        enc = self.encode(src, src_pad_mask)
        logits = self.decode_logits(enc, src_pad_mask, tgt_in,
                                    expert_bank=expert_bank,
                                    expert_onehot=expert_onehot)
        b, m, v = logits.shape
        mask = (tgt_out != PAD).reshape(-1)
        ntok = int(mask.sum())
        loss_sum = cross_entropy(logits.reshape(b * m, v), tgt_out.reshape(-1), mask)
        return loss_sum * (1.0 / max(ntok, 1)), ntok


def pad_batch(pairs, max_len):
    """Pack (src, tgt) id lists into padded arrays with BOS/EOS framing."""
    srcs = [p[0][:max_len] for p in pairs]
    tgts = [p[1][:max_len - 1] for p in pairs]
    n = max(len(s) for s in srcs)
    m = max(len(t) for t in tgts) + 1
    b = len(pairs)
    src = np.full((b, n), PAD, dtype=np.int64)
    tgt_in = np.full((b, m), PAD, dtype=np.int64)
    tgt_out = np.full((b, m), PAD, dtype=np.int64)
    for i, (s, t) in enumerate(zip(srcs, tgts)):
        src[i, :len(s)] = s
        tgt_in[i, 0] = BOS
        tgt_in[i, 1:len(t) + 1] = t
        tgt_out[i, :len(t)] = t
        tgt_out[i, len(t)] = EOS
    return {"src": src, "tgt_in": tgt_in, "tgt_out": tgt_out}


def beam_decode(model, src_ids, beam_size=5, max_len=None,
                expert_bank=None, expert_index=None, n_best=1):
    """Length-normalized beam search over one source sentence.

    Returns a list of (score, target_ids, completed) sorted best-first;
    beam_size=1 reduces to greedy argmax decoding.  If nothing completes
    within max_len the best partial is returned with EOS appended and
    completed=False.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    max_len = max_len or model.config.max_len
    src_ids = model.truncate(list(src_ids))
    with no_grad():
        src = np.asarray([src_ids], dtype=np.int64)
        src_pad_mask = src != PAD
        enc = model.encode(src, src_pad_mask)
        beams = [(0.0, [BOS])]  # (sum logprob, ids)
        done = []
        onehot = None
        if expert_bank is not None and expert_index is not None:
            onehot = np.zeros((1, expert_bank.num_experts))
            onehot[0, expert_index] = 1.0
        for _ in range(max_len - 1):
            b = len(beams)
            tgt_in = np.asarray([ids for _, ids in beams], dtype=np.int64)
            enc_rep = Tensor(np.repeat(enc.data, b, axis=0))
            mask_rep = np.repeat(src_pad_mask, b, axis=0)
            oh = np.repeat(onehot, b, axis=0) if onehot is not None else None
            logits = model.decode_logits(enc_rep, mask_rep, tgt_in,
                                         expert_bank=expert_bank, expert_onehot=oh)
            last = logits.data[:, -1, :]
            last = last - last.max(axis=1, keepdims=True)
            logp = last - np.log(np.exp(last).sum(axis=1, keepdims=True))
            logp[:, PAD] = NEG_INF
            cand = []
            for bi, (score, ids) in enumerate(beams):
                top = np.argsort(-logp[bi])[:beam_size]
                for t in top:
                    cand.append((score + logp[bi, t], ids + [int(t)]))
            cand.sort(key=lambda c: -c[0] / (len(c[1]) - 1))
            beams = []
            for score, ids in cand:
                if ids[-1] == EOS:
                    done.append((score / (len(ids) - 1), ids[1:], True))
                else:
                    beams.append((score, ids))
                if len(beams) >= beam_size:
                    break
            if not beams or len(done) >= beam_size:
                break
        if not done:
            # no completed hypothesis: flag the best partial
            best = max(beams, key=lambda c: c[0] / (len(c[1]) - 1))
            done = [(best[0] / (len(best[1]) - 1), best[1][1:] + [EOS], False)]
        done.sort(key=lambda c: -c[0])
        return done[:n_best]
