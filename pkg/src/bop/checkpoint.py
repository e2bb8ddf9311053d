"""Trainer checkpoints: a JSON manifest plus a BOPW weight blob.

The manifest carries everything that is not a float array (config, counters,
RNG states, environment states) and the sha256 of the blob, so a truncated or
swapped blob is caught on load.  Resuming from a checkpoint continues the run
bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .agent import Trainer
from .config import RunConfig
from .diffcore import ContractError, dump_arrays, load_arrays

MANIFEST = "manifest.json"
BLOB = "weights.bopw"
SCHEMA = 1


def _networks(trainer: Trainer):
    nets = [trainer.shared.prior, trainer.shared.encoder, trainer.shared.discriminator]
    for h in trainer.heads:
        nets += [h.generator, h.target, h.policy.net]
    return nets


def _optimizers(trainer: Trainer):
    return [trainer.disc_opt, trainer.enc_opt, *trainer.gen_opts, *trainer.pol_opts]


def _gather(trainer: Trainer) -> tuple[list[np.ndarray], list[bool]]:
    arrays: list[np.ndarray] = []
    for net in _networks(trainer):
        arrays += net.arrays()
    for opt in _optimizers(trainer):
        arrays += opt.arrays()
    arrays.append(trainer.probe)
    has_obs = [o is not None for o in trainer.obs]
    arrays += [o for o in trainer.obs if o is not None]
    return arrays, has_obs


def save(trainer: Trainer, path) -> Path:
    """Write ``manifest.json`` and ``weights.bopw`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays, has_obs = _gather(trainer)
    blob = dump_arrays(arrays)
    manifest = {
        "schema": SCHEMA,
        "config": trainer.cfg.to_dict(),
        "config_hash": trainer.cfg.digest(),
        "iteration": trainer.iteration,
        "env_steps": trainer.env_steps,
        "syncs": trainer.syncs,
        "rng": trainer.rng.bit_generator.state,
        "eval_rng": trainer.eval_rng.bit_generator.state,
        "envs": [e.get_state() for e in trainer.vec.envs],
        "eval_env": trainer.eval_env.get_state(),
        "active": list(trainer.active),
        "ep_return": list(trainer.ep_return),
        "has_obs": has_obs,
        "optimizer_steps": [o.step_count for o in _optimizers(trainer)],
        "ops": trainer.ops.snapshot(),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / BLOB).write_bytes(blob)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load(path) -> Trainer:
    """Rebuild a Trainer from a checkpoint directory."""
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text())
    if manifest.get("schema") != SCHEMA:
        raise ContractError(f"unsupported checkpoint schema {manifest.get('schema')!r}")
    blob = (path / BLOB).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise ContractError(f"{path / BLOB}: checksum mismatch, checkpoint is corrupt")
    cfg = RunConfig(**manifest["config"])
    if cfg.digest() != manifest["config_hash"]:
        raise ContractError("config hash mismatch in checkpoint manifest")
    trainer = Trainer(cfg)
    arrays = load_arrays(blob)
    pos = 0
    for net in _networks(trainer):
        n = len(net.params)
        net.load_arrays(arrays[pos:pos + n])
        pos += n
    for opt, steps in zip(_optimizers(trainer), manifest["optimizer_steps"], strict=True):
        n = 2 * len(opt.params)
        opt.load_arrays(arrays[pos:pos + n], steps)
        pos += n
    trainer.probe = arrays[pos]
    pos += 1
    obs = []
    for flag in manifest["has_obs"]:
        if flag:
            obs.append(arrays[pos])
            pos += 1
        else:
            obs.append(None)
    if pos != len(arrays):
        raise ContractError(f"checkpoint blob holds {len(arrays)} arrays, expected {pos}")
    trainer.obs = obs
    trainer.iteration = manifest["iteration"]
    trainer.env_steps = manifest["env_steps"]
    trainer.syncs = manifest["syncs"]
    trainer.rng.bit_generator.state = manifest["rng"]
    trainer.eval_rng.bit_generator.state = manifest["eval_rng"]
    for env, state in zip(trainer.vec.envs, manifest["envs"], strict=True):
        env.set_state(state)
    trainer.eval_env.set_state(manifest["eval_env"])
    trainer.active = list(manifest["active"])
    trainer.ep_return = list(manifest["ep_return"])
    trainer.ops.counts = dict(manifest["ops"])
    return trainer
