"""Training loops for the three stages.

Stage 1 trains the backbone on mixed data (no domain labels consulted).
Stage 2 trains only the discriminator on frozen pooled features.
Stage 3 trains only the expert banks, routing each sentence by Gumbel-Max
sampling over the frozen discriminator's scores.  All loops are
deterministic given (config, seed) in single-threaded mode.
"""

import json
import logging
import time

import numpy as np

from .corpus import PAD
from .discriminator import pool
from .experts import gumbel_max_route
from .model import pad_batch
from .optim import Adam, noam_lr
from .rng import RngStream
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


class JsonlLogger:
    def __init__(self, path=None):
        self._f = open(path, "w") if path else None

    def write(self, record):
        if self._f:
            self._f.write(json.dumps(record) + "\n")

    def close(self):
        if self._f:
            self._f.close()


def batch_indices(n, batch_size, rng, steps):
    """Yield (epoch, index array) batches from a reshuffled epoch stream."""
    produced = 0
    epoch = 0
    while produced < steps:
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            if produced >= steps:
                return
            yield epoch, order[lo:lo + batch_size]
            produced += 1
        epoch += 1


def evaluate_loss(model, pairs, batch_size=64, expert_bank=None, assign_fn=None):
    """Mean per-token loss over a corpus (frozen forward)."""
    total, ntok = 0.0, 0
    with no_grad():
        for lo in range(0, len(pairs), batch_size):
            chunk = pairs[lo:lo + batch_size]
            batch = pad_batch(chunk, model.config.max_len)
            onehot = assign_fn(chunk, batch) if assign_fn else None
            loss, n = model.loss_batch(batch, expert_bank=expert_bank,
                                       expert_onehot=onehot)
            total += loss.item() * n
            ntok += n
    return total / max(ntok, 1)


class _TranslationTrainer:
    """Shared machinery for the backbone and expert stages."""

    def __init__(self, model, params, cfg, run_cfg, log_path=None):
        self.model = model
        self.params = params
        self.cfg = cfg
        self.run_cfg = run_cfg
        self.opt = Adam(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                        grad_clip=cfg.grad_clip)
        self.logger = JsonlLogger(log_path)
        self.history = []
        self.diverged = False

    def run(self, train_pairs, dev_pairs, steps, rng, batch_hook=None):
        cfg, run_cfg = self.cfg, self.run_cfg
        snapshot = {k: p.data.copy() for k, p in self.params.items()}
        best_dev, bad_evals = float("inf"), 0
        accum = max(cfg.grad_accum, 1)
        micro = 0
        for epoch, idx in batch_indices(len(train_pairs), run_cfg.batch_size,
                                        rng, steps * accum):
            chunk = [train_pairs[i] for i in idx]
            batch = pad_batch(chunk, cfg.max_len)
            onehot = batch_hook(epoch, idx, chunk, batch) if batch_hook else None
            t0 = time.perf_counter()
            loss, ntok = self.model.loss_batch(
                batch, expert_bank=getattr(self, "bank", None), expert_onehot=onehot)
            val = loss.item()
            if not np.isfinite(val):
                log.error("training diverged at step %d; restoring last snapshot",
                          self.opt.step_count)
                for k, p in self.params.items():
                    p.data = snapshot[k].copy()
                self.diverged = True
                break
            loss.backward()
            micro += 1
            if micro % accum:
                continue
            step = self.opt.step_count + 1
            lr = noam_lr(step, cfg.warmup_steps, cfg.peak_lr)
            if accum > 1:
                for p in self.params.values():
                    if p.grad is not None:
                        p.grad /= accum
            self.opt.step(lr)
            self.opt.zero_grad()
            dt = time.perf_counter() - t0
            self.history.append(val)
            self.logger.write({"step": step, "lr": lr, "loss": val,
                               "tokens_per_sec": round(ntok / max(dt, 1e-9), 1)})
            if dev_pairs and step % run_cfg.eval_every == 0:
                dev = evaluate_loss(self.model, dev_pairs, run_cfg.batch_size,
                                    expert_bank=getattr(self, "bank", None),
                                    assign_fn=getattr(self, "eval_assign", None))
                self.logger.write({"step": step, "dev_loss": dev})
                if np.isfinite(dev):
                    snapshot = {k: p.data.copy() for k, p in self.params.items()}
                if dev < best_dev - 1e-6:
                    best_dev, bad_evals = dev, 0
                else:
                    bad_evals += 1
                    if bad_evals >= run_cfg.patience:
                        log.info("early stop at step %d (dev loss plateau)", step)
                        break
        self.logger.close()
        return self.history


def train_backbone(model, train_pairs, dev_pairs, run_cfg, rng, log_path=None):
    """Stage 1: standard translation training over all backbone params."""
    trainer = _TranslationTrainer(model, model.named_params(), model.config,
                                  run_cfg, log_path)
    trainer.run(train_pairs, dev_pairs, run_cfg.backbone_steps, rng)
    return trainer


def train_discriminator(disc, features, labels, run_cfg, rng, log_path=None):
    """Stage 2: distill cluster labels into the discriminator.

    Only the discriminator's four tensors are touched; features come from
    the frozen backbone and are precomputed.
    """
    cfg = run_cfg.model
    feats = np.asarray(features)
    labels = np.asarray(labels, dtype=np.int64)
    opt = Adam(disc.named_params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    logger = JsonlLogger(log_path)
    history = []
    for _, idx in batch_indices(len(feats), run_cfg.batch_size, rng,
                                run_cfg.discriminator_steps):
        loss = disc.loss(Tensor(feats[idx]), labels[idx])
        val = loss.item()
        loss.backward()
        step = opt.step_count + 1
        lr = noam_lr(step, run_cfg.disc_warmup_steps, run_cfg.disc_peak_lr)
        opt.step(lr)
        opt.zero_grad()
        history.append(val)
        logger.write({"step": step, "lr": lr, "loss": val})
    logger.close()
    return history


def _score_batch(model, disc, batch):
    """Frozen encoder + discriminator scores for a padded batch."""
    with no_grad():
        mask = batch["src"] != PAD
        h = model.encode(batch["src"], mask)
        feats = pool(h, mask)
        return disc.score(feats).data


def make_routing_hook(model, disc, bank, cfg, seed, decisions_out=None,
                      base_index=None):
    """Per-sentence Gumbel-Max routing for the expert training stage.

    Noise streams are keyed by (seed, epoch, sentence_id) so routing is
    reproducible and independent of batch order; decisions are redrawn
    every forward pass.
    """
    k, tau, kk = cfg.routing_k, cfg.temperature, cfg.num_experts

    def hook(epoch, idx, chunk, batch):
        scores = _score_batch(model, disc, batch)
        b = len(chunk)
        layers = cfg.num_layers if cfg.route_per_layer else 1
        onehot = np.zeros((layers, b, kk), dtype=model.src_embed.dtype)
        for j in range(b):
            sid = int(idx[j]) if base_index is None else int(base_index[idx[j]])
            for li in range(layers):
                stream = RngStream(seed + epoch * 1000003 + li * 7919, sid)
                dec = gumbel_max_route(scores[j], k, tau, stream, sentence_id=sid)
                onehot[li, j, dec.chosen] = 1.0
                if decisions_out is not None:
                    decisions_out.write(dec.to_json_obj())
        return onehot if cfg.route_per_layer else onehot[0]

    return hook


def make_argmax_assign(model, disc, num_experts):
    """Inference-mode assignment: argmax category per sentence."""

    def assign(chunk, batch):
        scores = _score_batch(model, disc, batch)
        onehot = np.zeros((len(chunk), num_experts), dtype=model.src_embed.dtype)
        onehot[np.arange(len(chunk)), scores.argmax(axis=1)] = 1.0
        return onehot

    return assign


def train_experts(model, bank, disc, train_pairs, dev_pairs, run_cfg, rng,
                  log_path=None, routing_log_path=None):
    """Stage 3: train only the expert banks with sampled routing."""
    cfg = run_cfg.model
    trainer = _TranslationTrainer(model, bank.named_params(), cfg, run_cfg, log_path)
    trainer.bank = bank
    trainer.eval_assign = make_argmax_assign(model, disc, cfg.num_experts)
    decisions = JsonlLogger(routing_log_path)
    hook = make_routing_hook(model, disc, bank, cfg, run_cfg.seed, decisions)
    trainer.run(train_pairs, dev_pairs, run_cfg.expert_steps, rng, batch_hook=hook)
    decisions.close()
    return trainer
