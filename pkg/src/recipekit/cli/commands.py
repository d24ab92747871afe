"""Implementations behind the CLI subcommands."""

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..imageops.geometry import to_u8
from ..imageops.pipeline import ConfigError, augment_batch, augment_train, denormalize
from ..imageops.ppm import write_ppm
from ..inference import (
    ProbMatrix,
    fuse,
    predict_center,
    predict_tta_batch,
    read_probmatrix,
    top1_accuracy,
    write_probmatrix,
)
from ..losses import ArcFaceHead, combined_loss
from ..model import TinyBackbone
from ..optim import LrSchedule, SgdState, TrainingError, lr_at, sgd_step
from ..rng import RngStream, stream_id, text_stream_id
from .config import RESOLVED_NAME
from .data import load_dataset, read_manifest

log = logging.getLogger("recipekit")

LOG_HEADER = "epoch,step,lr,loss,top1"
LOG_NAME = "train_log.csv"
CKPT_NAME = "model.ckpt"
PROBS_NAME = "probs.txt"

TWO_STAGE_MESSAGE = (
    "loss mode {mode!r} is the second training stage: it fine-tunes weights from a "
    "CE-only run. Pass --init-checkpoint PATH (a CE checkpoint) or --from-scratch "
    "to train the metric loss from random initialisation."
)


class UsageError(ConfigError):
    """Invalid command-line usage (exit code 2)."""


def write_resolved(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RESOLVED_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    return path


def _dtype(cfg):
    return np.float64 if cfg.dtype == "float64" else np.float32


def _initial_model(cfg):
    if cfg.init_checkpoint:
        ck = load_checkpoint(cfg.init_checkpoint)
        model = ck.model.astype(_dtype(cfg))
        if model.num_classes != cfg.num_classes:
            raise ConfigError(
                f"checkpoint has {model.num_classes} classes, config says {cfg.num_classes}"
            )
        model.input_size = cfg.image_size
        return model
    return TinyBackbone.init(cfg.seed, cfg.embed_dim, cfg.num_classes, cfg.image_size,
                             _dtype(cfg))


def _pk_batches(labels, n_steps, p, q, rng):
    """``n_steps`` batches of ``p`` distinct classes with ``q`` samples each."""
    by_class = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}
    classes = sorted(by_class)
    if len(classes) < 2:
        raise ConfigError("class-balanced sampling needs at least two classes")
    p = min(p, len(classes))
    batches = []
    for _ in range(n_steps):
        chosen = rng.permutation(len(classes))[:p]
        idx = []
        for ci in chosen:
            pool = by_class[classes[ci]]
            if len(pool) >= q:
                pick = rng.permutation(len(pool))[:q]
            else:
                pick = rng.integers_array(0, len(pool), q)
            idx.extend(int(pool[k]) for k in pick)
        batches.append(np.array(idx))
    return batches


def _plain_batches(n, batch_size, rng):
    order = rng.permutation(n)
    if n <= batch_size:
        return [order]
    steps = n // batch_size
    return [order[i * batch_size : (i + 1) * batch_size] for i in range(steps)]


def train(cfg, log_fn=print):
    """Run one training stage.  Returns a summary dict."""
    cfg.validate()
    metric = cfg.loss_mode != "ce"
    if metric and not cfg.init_checkpoint and not cfg.from_scratch:
        raise UsageError(TWO_STAGE_MESSAGE.format(mode=cfg.loss_mode))
    if metric and cfg.from_scratch and not cfg.init_checkpoint:
        log.warning("training %s from scratch; it is meant to fine-tune a CE checkpoint",
                    cfg.loss_mode)
    if not cfg.train_manifest:
        raise ConfigError("train_manifest is not set")

    out_dir = cfg.out_dir
    write_resolved(cfg, out_dir)
    data = load_dataset(cfg.train_manifest, cfg.num_classes)
    if cfg.merge_splits:
        if not cfg.val_manifest:
            raise ConfigError("merge_splits needs val_manifest")
        data = data.concat(load_dataset(cfg.val_manifest, cfg.num_classes))
    if len(data) == 0:
        raise ConfigError("training manifest is empty")

    aug = cfg.augment_config()
    loss_cfg = cfg.loss_config()
    model = _initial_model(cfg)
    if cfg.loss_mode == "ce+arcface":
        model.add_arcface_head(cfg.seed)
    state = SgdState.for_params(model.params, cfg.momentum, cfg.weight_decay)

    pk = cfg.loss_mode == "ce+triplet"
    batch = cfg.pk_classes * cfg.pk_samples if pk else cfg.batch_size
    steps_per_epoch = max(1, len(data) // batch)
    total = cfg.epochs * steps_per_epoch
    sched = None
    if total > 0:
        sched = LrSchedule(cfg.base_lr, batch, cfg.warmup_epochs * steps_per_epoch, total)

    log_path = os.path.join(out_dir, LOG_NAME)
    ckpt_path = os.path.join(out_dir, CKPT_NAME)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    step = 0
    lines = [LOG_HEADER]
    started = time.perf_counter()
    try:
        with open(log_path, "w", encoding="utf-8", newline="\n") as log_fh:
            log_fh.write(LOG_HEADER + "\n")
            for epoch in range(cfg.epochs):
                order_rng = _OrderRng(cfg.seed, epoch)
                if pk:
                    batches = _pk_batches(data.labels, steps_per_epoch, cfg.pk_classes,
                                          cfg.pk_samples, order_rng)
                else:
                    batches = _plain_batches(len(data), batch, order_rng)
                loss_sum, correct, seen = 0.0, 0, 0
                lr = 0.0
                for b in batches:
                    # one stream per (epoch, slot in epoch) keeps PK repeats distinct
                    rngs = [RngStream(cfg.seed, stream_id(epoch, seen + k)) for k in range(len(b))]
                    labels = data.labels[b]
                    x, targets = augment_batch([data.images[i] for i in b], labels, aug, rngs, pool)
                    hard = np.array([t.dominant for t in targets])
                    emb, logits = model.forward(x, train=True)
                    head = None
                    if cfg.loss_mode == "ce+arcface":
                        head = ArcFaceHead(model.params["arcface.weight"], cfg.arcface_scale,
                                           cfg.arcface_margin)
                    out = combined_loss(logits, emb, targets, hard, loss_cfg, head)
                    if not math.isfinite(out.value):
                        ids = [data.ids[i] for i in b]
                        raise TrainingError(f"non-finite loss at epoch {epoch} step {step}; "
                                            f"batch sample ids: {ids}")
                    grads = model.backward(out.grads.get("embeddings"), out.grads["logits"])
                    if "arcface" in out.grads:
                        grads["arcface.weight"] = out.grads["arcface"].astype(model.dtype)
                    lr = lr_at(step, sched)
                    sgd_step(model.params, grads, state, lr)
                    step += 1
                    loss_sum += out.value * len(b)
                    correct += int(np.sum(np.argmax(logits, axis=1) == hard))
                    seen += len(b)
                line = f"{epoch},{step},{lr:.8g},{loss_sum / seen:.6f},{correct / seen:.6f}"
                log_fh.write(line + "\n")
                log_fh.flush()
                lines.append(line)
                log_fn(f"epoch {epoch}: lr={lr:.5f} loss={loss_sum / seen:.4f} "
                       f"top1={correct / seen:.4f} ({time.perf_counter() - started:.1f}s)")
    finally:
        if pool is not None:
            pool.shutdown()
    save_checkpoint(ckpt_path, model, state, cfg.epochs, cfg.digest())
    return {"checkpoint": ckpt_path, "log": log_path, "lines": lines, "steps": step,
            "seconds": time.perf_counter() - started, "model": model}


class _OrderRng:
    """Epoch-level shuffling stream."""

    def __init__(self, seed, epoch):
        self._gen = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([int(seed), text_stream_id("order", epoch)])))

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers_array(self, lo, hi, size):
        return self._gen.integers(lo, hi, size=size)


def read_log(path):
    with open(path, encoding="utf-8") as fh:
        rows = [ln.strip().split(",") for ln in fh if ln.strip()]
    if not rows or ",".join(rows[0]) != LOG_HEADER:
        raise ValueError(f"{path}: not a training log")
    return [dict(epoch=int(r[0]), step=int(r[1]), lr=float(r[2]), loss=float(r[3]),
                 top1=float(r[4])) for r in rows[1:]]


def evaluate(cfg, checkpoint, manifest, tta, out_path=None, log_fn=print):
    """Predict a manifest; writes a ProbMatrix file when ``out_path`` is given."""
    ck = load_checkpoint(checkpoint)
    model = ck.model
    data = load_dataset(manifest, model.num_classes)
    if tta:
        probs = predict_tta_batch(model, data.images, data.ids, cfg.scales(), cfg.seed,
                                  cfg.mean, cfg.std)
    else:
        probs = predict_center(model, data.images, cfg.image_size, cfg.mean, cfg.std)
    pm = ProbMatrix(tuple(data.ids), probs)
    if out_path:
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        write_probmatrix(out_path, pm)
    acc = top1_accuracy(pm, data.labels)
    log_fn(f"top1={acc:.6f} n={len(data)} tta={'on' if tta else 'off'}")
    return pm, acc


def _labels_for(manifest, ids):
    rows = read_manifest(manifest)
    by_id = {sid: c for sid, _, c in rows}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ConfigError(f"labels missing for sample ids {missing[:10]}")
    return np.array([by_id[i] for i in ids])


def ensemble(paths, manifest, out_path=None, log_fn=print):
    members = [read_probmatrix(p) for p in paths]
    fused = fuse(members)
    labels = _labels_for(manifest, fused.ids)
    member_acc = []
    for p, m in zip(paths, members):
        acc = top1_accuracy(m.reordered(fused.ids), labels)
        member_acc.append(acc)
        log_fn(f"member {p}: top1={acc:.6f}")
    acc = top1_accuracy(fused, labels)
    log_fn(f"ensemble of {len(paths)}: top1={acc:.6f}")
    if out_path:
        write_probmatrix(out_path, fused)
    return fused, acc, member_acc


def augment_preview(cfg, n, out_dir, log_fn=print):
    """Dump crop / flip / autoaugment / cutmix intermediates plus a target sidecar."""
    cfg.validate()
    data = load_dataset(cfg.train_manifest, cfg.num_classes)
    aug = cfg.augment_config()
    os.makedirs(out_dir, exist_ok=True)
    sidecar = []
    for i in range(n):
        k = i % len(data)
        rng = RngStream(cfg.seed, text_stream_id("preview", i))
        # partners come from another class so a pasted patch is always visible in the target
        others = np.flatnonzero(data.labels != data.labels[k])
        if len(others):
            partner = int(others[rng.integers(0, len(others), label="preview.partner")])
        else:
            partner = k
        trace = {}
        out, target = augment_train(
            data.images[k], int(data.labels[k]), data.images[partner], int(data.labels[partner]),
            aug, rng, RngStream(cfg.seed, text_stream_id("preview-partner", i)), trace=trace,
        )
        stem = f"{i:04d}-{data.ids[k]}"
        for step in ("crop", "flip", "autoaugment"):
            write_ppm(os.path.join(out_dir, f"{stem}-{step}.ppm"), trace[step])
        final = to_u8(denormalize(out, aug.mean, aug.std) * 255.0)
        write_ppm(os.path.join(out_dir, f"{stem}-cutmix.ppm"), final)
        pairs = " ".join(f"{c}:{w!r}" for c, w in target.pairs)
        sidecar.append(f"{stem} {pairs}")
    path = os.path.join(out_dir, "targets.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(sidecar) + "\n")
    log_fn(f"wrote {n} previews to {out_dir}")
    return path
