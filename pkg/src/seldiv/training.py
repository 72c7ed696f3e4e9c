"""Alternating discriminator/generator optimization with diversity regularizers.

A run is a pure function of its :class:`TrainingConfig` (and the data): all
randomness after network initialization comes from a single seeded
``torch.Generator`` whose state is stored in every checkpoint.

Checkpoint files are ``torch.save`` archives holding a JSON header (format
version, step, config fingerprint, network specs, config) and named tensor
collections for both networks, both optimizers and the random state.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from .datasets import POINTS2D, ConditionedDataset, encode_conditions, group_by_condition
from .diversity import DiversityTable, lookup
from .errors import (
    CheckpointError,
    ConfigMismatchError,
    DivergenceError,
    InvalidArgumentError,
)
from .losses import LossConfig, adversarial_losses, ms_regularizer, sdi_regularizer, total_generator_loss
from .networks import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    spec_from_dict,
    spec_to_dict,
    specs_for_dataset,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
# fields that may change between a run and its resumption
_NON_FINGERPRINT = ("steps", "checkpoint_interval", "out_dir")


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 20000
    batch_size: int = 64
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    d_steps_per_g: int = 1
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    latent_dim: int = 16
    g_hidden: Tuple[int, ...] = (64, 64)
    d_hidden: Tuple[int, ...] = (128, 128)
    feature_dim: int = 64
    checkpoint_interval: int = 0
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidArgumentError("steps must be >= 1")
        if self.batch_size < 1 or self.d_steps_per_g < 1:
            raise InvalidArgumentError("batch_size and d_steps_per_g must be >= 1")
        if not (self.lr_g > 0 and self.lr_d > 0):
            raise InvalidArgumentError("learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgumentError("moment decays must lie in [0, 1)")
        if self.checkpoint_interval < 0:
            raise InvalidArgumentError("checkpoint_interval must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingConfig":
        doc = dict(doc)
        loss = LossConfig(**doc.pop("loss", {}))
        for k in ("g_hidden", "d_hidden"):
            if k in doc:
                doc[k] = tuple(doc[k])
        return cls(loss=loss, **doc)

    def fingerprint(self) -> str:
        doc = {k: v for k, v in self.to_dict().items() if k not in _NON_FINGERPRINT}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(eq=False)
class Checkpoint:
    step: int
    g_spec: GeneratorSpec
    d_spec: DiscriminatorSpec
    g_params: dict
    d_params: dict
    opt_g_state: dict
    opt_d_state: dict
    rng_state: torch.Tensor
    fingerprint: str
    kind: str
    config: dict = field(default_factory=dict)

    def generator(self) -> Generator:
        g = Generator(self.g_spec)
        g.load_state_dict(self.g_params)
        return g.eval()

    def discriminator(self) -> Discriminator:
        d = Discriminator(self.d_spec)
        d.load_state_dict(self.d_params)
        return d.eval()


def _clone_state(obj):
    if isinstance(obj, torch.Tensor):
        return obj.detach().clone()
    if isinstance(obj, dict):
        return {k: _clone_state(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_clone_state(v) for v in obj)
    return obj


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "step": ckpt.step,
        "fingerprint": ckpt.fingerprint,
        "kind": ckpt.kind,
        "g_spec": spec_to_dict(ckpt.g_spec),
        "d_spec": spec_to_dict(ckpt.d_spec),
        "config": ckpt.config,
    }
    blob = {
        "header": json.dumps(header, sort_keys=True),
        "g": ckpt.g_params,
        "d": ckpt.d_params,
        "opt_g": ckpt.opt_g_state,
        "opt_d": ckpt.opt_d_state,
        "rng": ckpt.rng_state,
    }
    tmp = f"{path}.tmp"
    torch.save(blob, tmp)
    os.replace(tmp, path)


def load_checkpoint(path, expect_fingerprint: Optional[str] = None) -> Checkpoint:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
        header = json.loads(blob["header"])
        ckpt = Checkpoint(
            step=int(header["step"]),
            g_spec=spec_from_dict(GeneratorSpec, header["g_spec"]),
            d_spec=spec_from_dict(DiscriminatorSpec, header["d_spec"]),
            g_params=blob["g"],
            d_params=blob["d"],
            opt_g_state=blob["opt_g"],
            opt_d_state=blob["opt_d"],
            rng_state=blob["rng"],
            fingerprint=header["fingerprint"],
            kind=header["kind"],
            config=header.get("config", {}),
        )
    except FileNotFoundError:
        raise
    except Exception as exc:  # torch raises many unrelated types on bad archives
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version")
    if expect_fingerprint is not None and ckpt.fingerprint != expect_fingerprint:
        raise ConfigMismatchError(
            f"{path}: checkpoint fingerprint {ckpt.fingerprint} != config {expect_fingerprint}"
        )
    return ckpt


def _per_sample_fdiv(dataset: ConditionedDataset, table: DiversityTable) -> np.ndarray:
    out = np.empty(len(dataset))
    if dataset.is_grouped and dataset.q == table.q:
        for _, idx in dataset.iter_groups():
            out[idx] = lookup(table, dataset.conditions[idx[0]])
    else:
        out[:] = table.lookup_many(dataset.conditions)
    return out


def _finite(*tensors) -> bool:
    return all(bool(torch.isfinite(t).all()) for t in tensors)


def train(
    dataset: ConditionedDataset,
    table: DiversityTable,
    cfg: TrainingConfig,
    resume: Optional[Checkpoint] = None,
) -> Tuple[Checkpoint, List[dict]]:
    """Run (or resume) training; returns the final checkpoint and the new log rows.

    With ``cfg.out_dir`` set, rows are appended to ``metrics.jsonl`` there and
    checkpoints are written every ``checkpoint_interval`` steps plus at the end.
    """
    loss_cfg = cfg.loss
    fingerprint = cfg.fingerprint()
    fdiv = _per_sample_fdiv(dataset, table)

    if resume is not None:
        if resume.fingerprint != fingerprint:
            raise ConfigMismatchError(
                f"checkpoint fingerprint {resume.fingerprint} != config {fingerprint}"
            )
        g_spec, d_spec = resume.g_spec, resume.d_spec
    else:
        g_spec, d_spec = specs_for_dataset(
            dataset, cfg.latent_dim, cfg.g_hidden, cfg.d_hidden, cfg.feature_dim
        )

    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        G, D = Generator(g_spec), Discriminator(d_spec)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.lr_g, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.lr_d, betas=(cfg.beta1, cfg.beta2))
    rng = torch.Generator().manual_seed(cfg.seed)
    start = 0
    if resume is not None:
        G.load_state_dict(resume.g_params)
        D.load_state_dict(resume.d_params)
        opt_g.load_state_dict(resume.opt_g_state)
        opt_d.load_state_dict(resume.opt_d_state)
        rng.set_state(resume.rng_state)
        start = resume.step

    X = torch.as_tensor(dataset.samples.astype(np.float32))
    C = torch.as_tensor(encode_conditions(dataset.kind, dataset.conditions).astype(np.float32))
    Fd = torch.as_tensor(fdiv.astype(np.float32))
    n, B, k = len(dataset), cfg.batch_size, g_spec.latent_dim

    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "metrics.jsonl", "a", encoding="utf-8")

    def snapshot(step: int) -> Checkpoint:
        return Checkpoint(
            step=step,
            g_spec=g_spec,
            d_spec=d_spec,
            g_params=_clone_state(G.state_dict()),
            d_params=_clone_state(D.state_dict()),
            opt_g_state=_clone_state(opt_g.state_dict()),
            opt_d_state=_clone_state(opt_d.state_dict()),
            rng_state=rng.get_state(),
            fingerprint=fingerprint,
            kind=dataset.kind,
            config=cfg.to_dict(),
        )

    def diverge(step: int, what: str):
        if out_dir is not None:
            save_checkpoint(snapshot(step - 1), out_dir / "last_good.pt")
        raise DivergenceError(step, what)

    rows: List[dict] = []
    try:
        for step in range(start + 1, cfg.steps + 1):
            # discriminator
            D.requires_grad_(True)
            for _ in range(cfg.d_steps_per_g):
                idx = torch.randint(n, (B,), generator=rng)
                x, c = X[idx], C[idx]
                z = torch.randn(B, k, generator=rng)
                with torch.no_grad():
                    fake = G(z, c)
                real_logits, _ = D(x, c)
                fake_logits, _ = D(fake, c)
                d_loss, _ = adversarial_losses(real_logits, fake_logits)
                if not _finite(d_loss):
                    diverge(step, "non-finite discriminator loss")
                opt_d.zero_grad(set_to_none=True)
                d_loss.backward()
                opt_d.step()

            # generator: two latent codes per condition
            D.requires_grad_(False)
            idx = torch.randint(n, (B,), generator=rng)
            c, f = C[idx], Fd[idx]
            z1 = torch.randn(B, k, generator=rng)
            z2 = torch.randn(B, k, generator=rng)
            same = (z1 == z2).all(dim=1)
            while bool(same.any()):
                z2[same] = torch.randn(int(same.sum()), k, generator=rng)
                same = (z1 == z2).all(dim=1)
            fake = G(torch.cat([z1, z2]), torch.cat([c, c]))
            logits, feats = D(fake, torch.cat([c, c]))
            g_adv = adversarial_losses(logits, logits)[1]

            mode = loss_cfg.regularizer_mode
            if mode == "none":
                reg = torch.zeros(B)
            else:
                rep = feats if loss_cfg.distance == "encoder_feature" else fake
                r1, r2 = rep[:B], rep[B:]
                if mode == "ms":
                    reg = ms_regularizer(r1, r2, z1, z2, loss_cfg, batched=True)
                else:
                    reg = sdi_regularizer(f, r1, r2, z1, z2, loss_cfg, batched=True)
            total = total_generator_loss(g_adv, reg.mean(), loss_cfg)
            if not _finite(total):
                diverge(step, "non-finite generator loss")
            opt_g.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()

            with torch.no_grad():
                lo, hi = f < 0.5, f >= 0.5
                row = {
                    "step": step,
                    "d_loss": d_loss.item(),
                    "g_adv": g_adv.item(),
                    "reg": reg.mean().item(),
                    "f_div": f.mean().item(),
                    "reg_consistent": reg[lo].mean().item() if bool(lo.any()) else None,
                    "reg_diverse": reg[hi].mean().item() if bool(hi.any()) else None,
                }
            rows.append(row)
            if log_fh is not None:
                log_fh.write(json.dumps(row) + "\n")
            if out_dir is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                save_checkpoint(snapshot(step), out_dir / f"ckpt_{step:07d}.pt")
    finally:
        if log_fh is not None:
            log_fh.close()

    final = snapshot(cfg.steps)
    if out_dir is not None:
        save_checkpoint(final, out_dir / "final.pt")
    return final, rows


def sample_generator(
    checkpoint: Checkpoint,
    conditions,
    n_per_condition: int,
    seed: int,
    chunk: int = 2048,
) -> ConditionedDataset:
    """Draw ``n_per_condition`` fresh generations for every raw condition."""
    conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    raw_dim = 2 if checkpoint.kind == POINTS2D else 9
    if conditions.shape[1] != raw_dim:
        raise InvalidArgumentError(
            f"{checkpoint.kind} conditions need {raw_dim} fields, got {conditions.shape[1]}"
        )
    if n_per_condition < 1:
        raise InvalidArgumentError("n_per_condition must be >= 1")
    G = checkpoint.generator()
    rep = np.repeat(conditions, n_per_condition, axis=0)
    enc = torch.as_tensor(encode_conditions(checkpoint.kind, rep).astype(np.float32))
    # latent codes are drawn in one go so results do not depend on ``chunk``
    rng = torch.Generator().manual_seed(seed)
    Z = torch.randn(len(enc), checkpoint.g_spec.latent_dim, generator=rng)
    out = []
    with torch.no_grad():
        for s in range(0, len(enc), chunk):
            out.append(G(Z[s:s + chunk], enc[s:s + chunk]).numpy())
    samples = np.concatenate(out).astype(np.float32)
    manifest = {
        "seed": int(seed),
        "generator_params": {
            "source": "generator",
            "checkpoint_step": checkpoint.step,
            "fingerprint": checkpoint.fingerprint,
            "n_per_condition": int(n_per_condition),
        },
    }
    return group_by_condition(ConditionedDataset(checkpoint.kind, rep, samples, manifest))
