"""Training loops, Adam optimizer, and checkpoint serialization.

Molecules are encoded individually (graph sizes vary; nothing is
padded) and their graph vectors stacked per batch. One logical thread
owns the parameters; per-molecule encoding may fan out to worker
threads capped by the GEOMGCL_THREADS environment variable.

Checkpoint files are little-endian binary: magic ``GGCL``, u32 format
version (1), u64 fingerprint of the encoder config plus feature dims,
u32 tensor count, then per tensor a u16 name length, the UTF-8 name,
u8 rank, u32 dims, and float32 values.
"""

import hashlib
import json
import logging
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import geommpnn, objectives
from .geommpnn import EncoderConfig, featurize
from .molio import CLASSIFICATION, labels_matrix, split_dataset
from .tensorad import ParameterStore, concat, evaluate_with_gradients, mul

log = logging.getLogger("geomgcl")

CHECKPOINT_MAGIC = b"GGCL"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or mismatched checkpoint file."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_pretrain: int = 256
    batch_finetune: int = 32
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0
    lambda_reg: float = 0.01
    tau: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_pretrain < 1 or self.batch_finetune < 1:
            raise ValueError("lr and batch sizes must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if self.lambda_reg < 0 or self.tau <= 0:
            raise ValueError("lambda_reg must be >= 0 and tau > 0")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params):
        state = cls()
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update applied in place."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for name, tensor in params.items():
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} for {name} "
                             f"does not match parameter shape {tensor.data.shape}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / (1.0 - b1 ** t)
        v_hat = state.v[name] / (1.0 - b2 ** t)
        tensor.data = tensor.data - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)


# ---------------------------------------------------------------------------
# checkpoint serialization


def config_fingerprint(config, feature_dims):
    """Stable 64-bit digest of the encoder config and feature dims."""
    payload = dict(asdict(config))
    payload["feature_dims"] = [int(d) for d in feature_dims]
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass
class Checkpoint:
    version: int
    fingerprint: int
    tensors: dict    # name -> float32 ndarray


def checkpoint_from_params(params, config, feature_dims):
    tensors = {name: t.data.astype(np.float32) for name, t in params.items()}
    return Checkpoint(
        version=CHECKPOINT_VERSION,
        fingerprint=config_fingerprint(config, feature_dims),
        tensors=tensors,
    )


def write_checkpoint(checkpoint, path):
    """Serialize to the binary format, atomically (temp file + rename)."""
    parts = [struct.pack("<4sIQI", CHECKPOINT_MAGIC, checkpoint.version,
                         checkpoint.fingerprint, len(checkpoint.tensors))]
    for name in sorted(checkpoint.tensors):
        data = np.ascontiguousarray(checkpoint.tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    blob = b"".join(parts)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(params, config, feature_dims, path):
    ckpt = checkpoint_from_params(params, config, feature_dims)
    write_checkpoint(ckpt, path)
    return ckpt


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: expected {n} bytes for {what}, "
                f"found {len(self.blob) - self.off}"
            )
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out


def load_checkpoint(path, expected_fingerprint=None):
    """Read a checkpoint; verifies magic, version, and fingerprint."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic, version, fingerprint, count = struct.unpack("<4sIQI", r.take(20, "header"))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic: {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version: {version}")
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise CheckpointError(
            f"fingerprint mismatch: checkpoint {fingerprint:#x}, "
            f"expected {expected_fingerprint:#x}"
        )
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2, "name length"))
        name = r.take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        n_values = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(4 * n_values, f"tensor {name}"), dtype="<f4")
        tensors[name] = data.reshape(dims).copy()
    if r.off != len(blob):
        raise CheckpointError(f"trailing bytes after tensor data: {len(blob) - r.off}")
    return Checkpoint(version=version, fingerprint=fingerprint, tensors=tensors)


# ---------------------------------------------------------------------------
# batching helpers


def _worker_count():
    raw = os.environ.get("GEOMGCL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _encode_pairs(molecule_inputs, params, config):
    """Both view vectors for each molecule, stacked into (N, D) tensors."""
    workers = _worker_count()

    def one(inp):
        h2 = geommpnn.encode_view("2d", inp, params, config).reshape((1, config.hidden))
        h3 = geommpnn.encode_view("3d", inp, params, config).reshape((1, config.hidden))
        return h2, h3

    if workers > 1 and len(molecule_inputs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            encoded = list(pool.map(one, molecule_inputs))
    else:
        encoded = [one(inp) for inp in molecule_inputs]
    h2d = concat([e[0] for e in encoded], axis=0)
    h3d = concat([e[1] for e in encoded], axis=0)
    return h2d, h3d


def _batches(order, size):
    for lo in range(0, len(order), size):
        yield order[lo:lo + size]


# ---------------------------------------------------------------------------
# pretraining


@dataclass
class PretrainResult:
    params: ParameterStore
    checkpoint: Checkpoint
    history: list            # rows: dicts with epoch/contrastive stats
    best_epoch: int


def _pretrain_loss(params, inputs, enc_cfg, train_cfg):
    h2d, h3d = _encode_pairs(inputs, params, enc_cfg)
    z2d = objectives.project(h2d, params, "2d", enc_cfg.leaky_slope)
    z3d = objectives.project(h3d, params, "3d", enc_cfg.leaky_slope)
    closs = objectives.contrastive_loss(z2d, z3d, train_cfg.tau)
    reg = objectives.spatial_regularizer(params, enc_cfg.layers, enc_cfg.angle_domains)
    step_loss = objectives.combined_pretrain_loss(
        mul(closs, 1.0 / len(inputs)), reg, train_cfg.lambda_reg
    )
    return step_loss, float(closs.data), float(reg.data)


def gradient_self_test(dataset, enc_cfg, train_cfg, n_molecules=3, n_samples=50,
                       fd_step=1e-5, seed=0, denom_floor=1e-6):
    """Finite-difference check of the full pretraining loss.

    Samples parameter entries, compares the analytic gradient against a
    central difference, and returns the worst relative error. The
    relative-error denominator is floored at `denom_floor` so that
    near-zero gradients are compared on that absolute scale (central
    differences of an O(1) loss carry ~1e-10 roundoff noise, which
    would otherwise dominate the ratio).
    """
    mols = dataset.molecules[:n_molecules]
    inputs = [featurize(m, enc_cfg) for m in mols]
    rng = np.random.default_rng(seed)
    params = geommpnn.init_encoder_params(enc_cfg, dataset.feature_dims, rng)
    geommpnn.init_projection_params(enc_cfg, rng, params)

    def loss_fn(p):
        step_loss, _, _ = _pretrain_loss(p, inputs, enc_cfg, train_cfg)
        return step_loss

    _, grads = evaluate_with_gradients(loss_fn, params)

    names = params.names()
    worst = 0.0
    for _ in range(n_samples):
        name = names[int(rng.integers(len(names)))]
        tensor = params[name]
        if tensor.data.size == 0:
            continue
        flat_idx = int(rng.integers(tensor.data.size))
        idx = np.unravel_index(flat_idx, tensor.data.shape)
        original = tensor.data[idx]
        tensor.data[idx] = original + fd_step
        up, _, _ = _pretrain_loss(params, inputs, enc_cfg, train_cfg)
        tensor.data[idx] = original - fd_step
        down, _, _ = _pretrain_loss(params, inputs, enc_cfg, train_cfg)
        tensor.data[idx] = original
        numeric = (float(up.data) - float(down.data)) / (2.0 * fd_step)
        analytic = grads[name][idx]
        denom = max(abs(numeric), abs(analytic), denom_floor)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def pretrain(dataset, enc_cfg, train_cfg, run_self_test=False):
    """Contrastive pretraining; returns the best-loss checkpoint."""
    if run_self_test:
        err = gradient_self_test(dataset, enc_cfg, train_cfg)
        if err > 1e-4:
            raise ValueError(f"gradient self-test failed: relative error {err:.3e}")

    rng = np.random.default_rng(train_cfg.seed)
    params = geommpnn.init_encoder_params(enc_cfg, dataset.feature_dims, rng)
    geommpnn.init_projection_params(enc_cfg, rng, params)
    inputs = [featurize(m, enc_cfg) for m in dataset.molecules]
    state = AdamState.for_params(params)

    n = len(inputs)
    history = []
    best_loss = np.inf
    best_values = params.values()
    best_epoch = -1
    warned_singleton = False

    for epoch in range(train_cfg.max_epochs):
        order = rng.permutation(n)
        contrastive_total = 0.0
        for batch in _batches(order, train_cfg.batch_pretrain):
            if len(batch) == 1 and not warned_singleton:
                log.warning("pretrain batch of size 1: contrastive contribution is 0")
                warned_singleton = True
            batch_inputs = [inputs[i] for i in batch]

            def loss_fn(p):
                step_loss, closs, _ = _pretrain_loss(p, batch_inputs, enc_cfg, train_cfg)
                loss_fn.contrastive = closs
                return step_loss

            _, grads = evaluate_with_gradients(loss_fn, params)
            adam_step(params, grads, state, train_cfg)
            contrastive_total += loss_fn.contrastive

        reg_val = float(objectives.spatial_regularizer(
            params, enc_cfg.layers, enc_cfg.angle_domains).data)
        mean_loss = contrastive_total / n
        combined = mean_loss + train_cfg.lambda_reg * reg_val
        history.append({
            "epoch": epoch,
            "contrastive_total": contrastive_total,
            "contrastive_mean": mean_loss,
            "spatial_reg": reg_val,
            "combined_mean": combined,
        })
        if combined < best_loss:
            best_loss = combined
            best_values = params.values()
            best_epoch = epoch
        log.info("pretrain epoch %d: mean contrastive %.6f, reg %.6f", epoch, mean_loss, reg_val)

    best_params = ParameterStore()
    for name, value in sorted(best_values.items()):
        best_params.add(name, value)
    ckpt = checkpoint_from_params(best_params, enc_cfg, dataset.feature_dims)
    return PretrainResult(params=best_params, checkpoint=ckpt,
                          history=history, best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# finetuning


@dataclass
class FinetuneResult:
    params: ParameterStore
    history: list            # rows: dicts with epoch/train_loss/valid_metric
    best_valid: float
    test_metric: float
    best_epoch: int
    metric_name: str
    splits: tuple


def _predict_scores(idxs, inputs, params, enc_cfg):
    batch_inputs = [inputs[i] for i in idxs]
    h2d, h3d = _encode_pairs(batch_inputs, params, enc_cfg)
    return objectives.predict(h2d, h3d, params, enc_cfg.leaky_slope)


def evaluate_metric(dataset, idxs, inputs, params, enc_cfg, eval_batch=64):
    """Task metric on a subset: mean ROC-AUC or RMSE by task type.

    Returns None when the subset is empty or the metric is undefined
    (e.g. every task single-class).
    """
    idxs = list(idxs)
    if not idxs:
        return None
    scores = []
    for batch in _batches(idxs, eval_batch):
        scores.append(_predict_scores(batch, inputs, params, enc_cfg).data)
    scores = np.concatenate(scores, axis=0)
    labels, mask = labels_matrix(dataset, idxs)
    if dataset.task_type == CLASSIFICATION:
        _, mean = objectives.roc_auc(scores, labels, mask)
        return mean
    if mask.sum() == 0:
        return None
    return objectives.rmse(scores, labels, mask)


def finetune(dataset, checkpoint, enc_cfg, train_cfg, splits=None):
    """Supervised training from a pretrained checkpoint (or from scratch).

    Early-stops on the validation metric and reports the test metric of
    the best-validation parameters.
    """
    if dataset.task_count < 1:
        raise ValueError("finetune requires labeled molecules")
    if checkpoint is not None:
        expected = config_fingerprint(enc_cfg, dataset.feature_dims)
        if checkpoint.fingerprint != expected:
            raise CheckpointError(
                f"fingerprint mismatch: checkpoint {checkpoint.fingerprint:#x}, "
                f"expected {expected:#x}"
            )

    classification = dataset.task_type == CLASSIFICATION
    metric_name = "roc_auc" if classification else "rmse"
    better = (lambda a, b: a > b) if classification else (lambda a, b: a < b)

    if splits is None:
        splits = split_dataset(dataset, (0.8, 0.1, 0.1), train_cfg.seed)
    train_idx, valid_idx, test_idx = splits

    rng = np.random.default_rng(train_cfg.seed)
    params = geommpnn.init_encoder_params(enc_cfg, dataset.feature_dims, rng)
    geommpnn.init_prediction_params(enc_cfg, dataset.task_count, rng, params)
    if checkpoint is not None:
        encoder_values = {name: value.astype(np.float64)
                          for name, value in checkpoint.tensors.items()
                          if name in params}
        params.load_values(encoder_values)

    inputs = [featurize(m, enc_cfg) for m in dataset.molecules]
    all_labels, all_mask = labels_matrix(dataset, range(len(dataset)))
    state = AdamState.for_params(params)

    history = []
    best_valid = -np.inf if classification else np.inf
    best_values = params.values()
    best_epoch = -1

    for epoch in range(train_cfg.max_epochs):
        order = rng.permutation(len(train_idx))
        epoch_loss = 0.0
        n_batches = 0
        for batch in _batches(order, train_cfg.batch_finetune):
            idxs = [train_idx[i] for i in batch]
            labels = all_labels[idxs]
            mask = all_mask[idxs]
            if mask.sum() == 0:
                log.warning("skipping batch with no labels")
                continue

            def loss_fn(p):
                preds = _predict_scores(idxs, inputs, p, enc_cfg)
                reg = objectives.spatial_regularizer(p, enc_cfg.layers, enc_cfg.angle_domains)
                if classification:
                    return objectives.classification_loss(
                        preds, labels, mask, train_cfg.lambda_reg, reg)
                return objectives.regression_loss(
                    preds, labels, mask, train_cfg.lambda_reg, reg)

            value, grads = evaluate_with_gradients(loss_fn, params)
            adam_step(params, grads, state, train_cfg)
            epoch_loss += value
            n_batches += 1

        valid_metric = evaluate_metric(dataset, valid_idx, inputs, params, enc_cfg)
        train_loss = epoch_loss / max(n_batches, 1)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "valid_metric": valid_metric})
        log.info("finetune epoch %d: train loss %.6f, valid %s %s",
                 epoch, train_loss, metric_name, valid_metric)
        if valid_metric is None:
            # no validation signal (empty split or undefined metric):
            # keep training and return the final parameters
            best_values = params.values()
            best_epoch = epoch
        elif better(valid_metric, best_valid):
            best_valid = valid_metric
            best_values = params.values()
            best_epoch = epoch
        elif best_epoch >= 0 and epoch - best_epoch >= train_cfg.patience:
            log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
            break

    params.load_values(best_values)
    test_metric = evaluate_metric(dataset, test_idx, inputs, params, enc_cfg)
    return FinetuneResult(params=params, history=history, best_valid=best_valid,
                          test_metric=test_metric, best_epoch=best_epoch,
                          metric_name=metric_name, splits=(train_idx, valid_idx, test_idx))


def kfold_evaluate(dataset, k, enc_cfg, train_cfg, do_pretrain=True):
    """Repeated-split evaluation with seeds 0..k-1; returns per-fold metrics."""
    if k < 2:
        raise ValueError("k must be >= 2")
    per_fold = []
    for fold in range(k):
        fold_cfg = replace(train_cfg, seed=fold)
        splits = split_dataset(dataset, (0.8, 0.1, 0.1), fold)
        ckpt = None
        if do_pretrain:
            ckpt = pretrain(dataset, enc_cfg, fold_cfg).checkpoint
        result = finetune(dataset, ckpt, enc_cfg, fold_cfg, splits=splits)
        per_fold.append(result.test_metric)
    return {"per_fold": per_fold, "mean": float(np.mean(per_fold)),
            "metric": "roc_auc" if dataset.task_type == CLASSIFICATION else "rmse"}
