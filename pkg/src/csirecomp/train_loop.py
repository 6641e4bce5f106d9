"""Training protocol: splits, mini-batch optimization, early stopping.

A dataset is split 72:18:10 by a seeded permutation; normalization
statistics are fitted on the training indices only. Models minimize mean
squared error with Adam (lr 0.001, batch 64) for at most 100 epochs,
stopping early once the validation loss has gone 10 consecutive epochs
without improving on its running best, and the best-validation-epoch
weights are restored. The full comparison protocol trains every model
kind over a shared list of seeds on identical splits so per-seed results
are paired.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from . import dataset_store, model_zoo, preprocess
from .dataset_store import DatasetBundle, ModalityError
from .model_zoo import ModelParams, ModelSpec


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss at epoch {epoch}: {loss}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 100
    learning_rate: float = 0.001
    optimizer: str = "adam"
    patience: int = 10
    split_ratio: Tuple[float, float, float] = (0.72, 0.18, 0.10)
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)
    split_seed: int = 0
    deterministic: bool = False
    image_hw: Tuple[int, int] = (96, 96)
    eval_batch_size: int = 256

    def __post_init__(self):
        if abs(sum(self.split_ratio) - 1.0) > 1e-9:
            raise ValueError(f"split_ratio must sum to 1, got {self.split_ratio}")
        if any(r <= 0 for r in self.split_ratio):
            raise ValueError("split ratios must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if min(self.batch_size, self.max_epochs, self.patience) < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunRecord:
    kind: str
    seed: int
    train_losses: List[float]
    val_losses: List[float]
    best_epoch: int
    stopping_epoch: int
    params: Optional[ModelParams] = None
    test_rmse: Optional[float] = None
    run_dir: Optional[str] = None

    @property
    def best_val_loss(self) -> float:
        return min(self.val_losses)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "stopping_epoch": self.stopping_epoch,
            "test_rmse": self.test_rmse,
        }


def split_dataset(n: int, ratio: Tuple[float, float, float], seed: int):
    """Seeded-permutation split into (train, val, test) index arrays.

    Validation and test sizes are floor(n * r); the rounding remainder
    goes to training. The three sets partition range(n).
    """
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    n_val = math.floor(n * ratio[1])
    n_test = math.floor(n * ratio[2])
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} samples leaves an empty subset for ratio {ratio}")
    perm = np.random.default_rng(seed).permutation(n)
    return (
        perm[:n_train].copy(),
        perm[n_train : n_train + n_val].copy(),
        perm[n_train + n_val :].copy(),
    )


def early_stop_epoch(losses: Sequence[float], patience: int) -> Tuple[int, int]:
    """(best_epoch, stopping_epoch) for a per-epoch loss sequence, 1-indexed.

    Training stops at the first epoch whose trailing `patience` losses are
    all strictly above the best loss seen before them; a tie with the best
    does not count against the patience. Returns len(losses) as the
    stopping epoch when the rule never triggers.
    """
    best = math.inf
    best_epoch = 0
    since_best = 0
    for epoch, loss in enumerate(losses, start=1):
        if loss < best:
            best = loss
            best_epoch = epoch
            since_best = 0
        elif loss == best:
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                return best_epoch, epoch
    return best_epoch, len(losses)


@dataclass
class PreparedData:
    """Dataset tensors ready for the torch models, split and normalized."""

    bfm: Optional[torch.Tensor]     # (n, 2, K, F_b)
    images: Optional[torch.Tensor]  # (n, 3, h, w)
    targets: torch.Tensor           # (n, 1, K, F_h)
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    stats: preprocess.NormStats
    k: int
    f_b: int
    f_h: int
    image_hw: Tuple[int, int]

    @property
    def has_images(self) -> bool:
        return self.images is not None

    def model_config(self) -> Dict[str, int]:
        return {
            "K": self.k, "F_b": self.f_b, "F_h": self.f_h,
            "h": self.image_hw[0], "w": self.image_hw[1],
        }

    def inputs_for(self, kind: str, idx: np.ndarray):
        ids = torch.from_numpy(np.asarray(idx))
        bfm = None
        image = None
        if kind in ("mmi", "smi-bfm"):
            bfm = self.bfm[ids].contiguous(memory_format=torch.channels_last)
        if kind in ("mmi", "smi-image"):
            image = self.images[ids].contiguous(memory_format=torch.channels_last)
        return bfm, image


def prepare_dataset(
    bundle: DatasetBundle, config: TrainConfig, split=None
) -> PreparedData:
    """Split, preprocess and tensorize an in-memory dataset."""
    n = bundle.manifest.sample_count
    if split is None:
        split = split_dataset(n, config.split_ratio, config.split_seed)
    train_idx, val_idx, test_idx = split

    bfm = bundle.bfm_or_emulate()
    feats, images01, targets, stats = preprocess.preprocess_dataset(
        bundle.csi, bfm, bundle.images, train_idx, image_hw=config.image_hw
    )
    images_t = None
    if images01 is not None:
        images_t = torch.from_numpy(np.ascontiguousarray(images01.transpose(0, 3, 1, 2)))
    return PreparedData(
        bfm=torch.from_numpy(np.ascontiguousarray(feats.transpose(0, 3, 1, 2))),
        images=images_t,
        targets=torch.from_numpy(targets.transpose(0, 3, 1, 2)),  # (n, 1, K, F_h)
        train_idx=np.asarray(train_idx),
        val_idx=np.asarray(val_idx),
        test_idx=np.asarray(test_idx),
        stats=stats,
        k=feats.shape[1],
        f_b=feats.shape[2],
        f_h=targets.shape[2],
        image_hw=config.image_hw,
    )


def _check_modalities(kind: str, data: PreparedData) -> None:
    if kind in ("mmi", "smi-image") and not data.has_images:
        raise ModalityError(f"{kind} model requested but the dataset has no images")


@contextmanager
def _determinism(enabled: bool):
    if not enabled:
        yield
        return
    prev_threads = torch.get_num_threads()
    prev_flag = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(prev_threads)
        torch.use_deterministic_algorithms(prev_flag)


def _epoch_loss(module, data: PreparedData, kind: str, idx: np.ndarray, batch: int) -> float:
    """Mean squared error over a split in eval mode."""
    module.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for lo in range(0, len(idx), batch):
            chunk = idx[lo : lo + batch]
            bfm, image = data.inputs_for(kind, chunk)
            out = module(bfm=bfm, image=image)
            target = data.targets[torch.from_numpy(chunk)]
            total += torch.sum((out - target) ** 2).item()
            count += target.numel()
    return total / count


def predict(params: ModelParams, data: PreparedData, idx: np.ndarray, batch: int = 256) -> np.ndarray:
    """Eval-mode predictions for the given sample indices, (n, K, F_h, 1)."""
    module = params.module
    module.eval()
    outs = []
    with torch.no_grad():
        for lo in range(0, len(idx), batch):
            chunk = np.asarray(idx[lo : lo + batch])
            bfm, image = data.inputs_for(params.spec.kind, chunk)
            out = module(bfm=bfm, image=image)
            outs.append(out.permute(0, 2, 3, 1).numpy())
    return np.concatenate(outs, axis=0)


def train(
    kind: str,
    data: PreparedData,
    config: TrainConfig,
    seed: int,
    out_dir=None,
    log=None,
) -> RunRecord:
    """One seeded training run; returns the best-validation-epoch model."""
    _check_modalities(kind, data)
    with _determinism(config.deterministic):
        spec = model_zoo.build_model(kind, data.model_config())
        params = model_zoo.init_params(spec, seed)
        module = params.module.to(memory_format=torch.channels_last)
        optimizer = torch.optim.Adam(module.parameters(), lr=config.learning_rate)
        loss_fn = nn.MSELoss()
        shuffler = torch.Generator().manual_seed(seed)

        train_ids = torch.from_numpy(np.asarray(data.train_idx))
        n_train = len(train_ids)
        train_losses: List[float] = []
        val_losses: List[float] = []
        best_val = math.inf
        best_epoch = 0
        best_state = None
        since_best = 0
        stopping_epoch = config.max_epochs

        for epoch in range(1, config.max_epochs + 1):
            module.train()
            order = torch.randperm(n_train, generator=shuffler)
            epoch_sum = 0.0
            for lo in range(0, n_train, config.batch_size):
                chunk = train_ids[order[lo : lo + config.batch_size]]
                bfm = image = None
                if kind in ("mmi", "smi-bfm"):
                    bfm = data.bfm[chunk].contiguous(memory_format=torch.channels_last)
                if kind in ("mmi", "smi-image"):
                    image = data.images[chunk].contiguous(memory_format=torch.channels_last)
                target = data.targets[chunk]
                optimizer.zero_grad()
                out = module(bfm=bfm, image=image)
                loss = loss_fn(out, target)
                loss.backward()
                optimizer.step()
                epoch_sum += loss.item() * len(chunk)
            train_loss = epoch_sum / n_train
            val_loss = _epoch_loss(module, data, kind, data.val_idx, config.eval_batch_size)
            train_losses.append(train_loss)
            val_losses.append(val_loss)
            if log:
                log(f"[{kind} seed={seed}] epoch {epoch}: train {train_loss:.6f} val {val_loss:.6f}")
            if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
                raise TrainingDiverged(epoch, val_loss if not math.isfinite(val_loss) else train_loss)

            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_state = copy.deepcopy(module.state_dict())
                since_best = 0
            elif val_loss == best_val:
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    stopping_epoch = epoch
                    break
        else:
            stopping_epoch = len(val_losses)

        module.load_state_dict(best_state)
        record = RunRecord(
            kind=kind,
            seed=seed,
            train_losses=train_losses,
            val_losses=val_losses,
            best_epoch=best_epoch,
            stopping_epoch=stopping_epoch,
            params=params,
        )
        test_pred = predict(params, data, data.test_idx, config.eval_batch_size)
        test_truth = data.targets[torch.from_numpy(np.asarray(data.test_idx))]
        test_truth = test_truth.permute(0, 2, 3, 1).numpy()
        record.test_rmse = float(np.sqrt(np.mean((test_pred - test_truth) ** 2)))

    if out_dir is not None:
        write_run_dir(out_dir, record, config, data)
    return record


def write_run_dir(out_dir, record: RunRecord, config: TrainConfig, data: PreparedData) -> None:
    """Persist a run: config snapshot, split, loss log, checkpoint, manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record.run_dir = str(out_dir)

    snapshot = {
        "kind": record.kind,
        "seed": record.seed,
        "train_config": config.to_json_dict(),
        "model_spec": record.params.spec.to_json_dict(),
    }
    (out_dir / "config.json").write_text(json.dumps(snapshot, indent=2))
    (out_dir / "split.json").write_text(
        json.dumps(
            {
                "split_seed": config.split_seed,
                "ratio": list(config.split_ratio),
                "train": data.train_idx.tolist(),
                "val": data.val_idx.tolist(),
                "test": data.test_idx.tolist(),
            }
        )
    )
    with open(out_dir / "losses.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, va) in enumerate(zip(record.train_losses, record.val_losses), start=1):
            writer.writerow([i, repr(tr), repr(va)])

    tensors = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in record.params.module.state_dict().items()
    }
    dataset_store.save_checkpoint(
        out_dir,
        tensors,
        meta={
            "model_spec": record.params.spec.to_json_dict(),
            "seed": record.seed,
            "best_epoch": record.best_epoch,
            "stopping_epoch": record.stopping_epoch,
            "metrics": {"best_val_loss": record.best_val_loss, "test_rmse": record.test_rmse},
        },
    )
    (out_dir / "runrecord.json").write_text(json.dumps(record.to_json_dict(), indent=2))
    (out_dir / "metrics.json").write_text(
        json.dumps(
            {
                "kind": record.kind,
                "seed": record.seed,
                "best_epoch": record.best_epoch,
                "stopping_epoch": record.stopping_epoch,
                "best_val_loss": record.best_val_loss,
                "test_rmse": record.test_rmse,
                "n_test": len(data.test_idx),
            },
            indent=2,
        )
    )


def load_run_params(run_dir) -> ModelParams:
    """Rebuild ModelParams from a run directory's checkpoint."""
    tensors, meta = dataset_store.load_checkpoint(run_dir)
    spec = ModelSpec.from_json_dict(meta["model_spec"])
    params = model_zoo.init_params(spec, meta["seed"])
    state = {name: torch.from_numpy(np.asarray(arr)) for name, arr in tensors.items()}
    params.module.load_state_dict(state)
    return params


@dataclass
class ProtocolResult:
    records: Dict[str, Dict[int, RunRecord]]
    failures: Dict[str, Dict[int, Exception]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_protocol(
    data: PreparedData,
    kinds: Sequence[str],
    config: TrainConfig,
    out_root=None,
    log=None,
) -> ProtocolResult:
    """Train every (kind, seed) combination on the shared split.

    Failures are collected per run so partial results survive; callers
    decide whether a non-empty failure set is fatal.
    """
    records: Dict[str, Dict[int, RunRecord]] = {}
    failures: Dict[str, Dict[int, Exception]] = {}
    for kind in kinds:
        records[kind] = {}
        for seed in config.seeds:
            run_dir = None
            if out_root is not None:
                run_dir = Path(out_root) / kind / f"seed-{seed}"
            started = time.time()
            try:
                record = train(kind, data, config, seed, out_dir=run_dir, log=log)
            except (TrainingDiverged, ModalityError) as exc:
                failures.setdefault(kind, {})[seed] = exc
                if log:
                    log(f"[{kind} seed={seed}] FAILED: {exc}")
                continue
            records[kind][seed] = record
            if log:
                log(
                    f"[{kind} seed={seed}] done in {time.time() - started:.1f}s: "
                    f"best epoch {record.best_epoch}, stopped {record.stopping_epoch}, "
                    f"test RMSE {record.test_rmse:.5f}"
                )
    return ProtocolResult(records=records, failures=failures)
