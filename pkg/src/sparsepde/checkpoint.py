"""Versioned JSON checkpoints.

Arrays are stored as base64 little-endian float64 with their shapes. The whole
document is written with sorted keys and fixed separators, and carries a
SHA-256 over its own canonical text, so save -> load -> save is
byte-identical and any truncation or bit flip is detected.
"""
import base64
import hashlib
import json
import os

import numpy as np

from sparsepde.env import EnvConfig
from sparsepde.errors import (
    CheckpointCorruptError,
    CheckpointError,
    CheckpointMismatchError,
    CheckpointShapeError,
    CheckpointVersionError,
)
from sparsepde.td3 import Td3Agent, Td3Hyper

FORMAT = "sparsepde-checkpoint"
VERSION = 1


def _encode(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(entry, name):
    try:
        raw = base64.b64decode(entry["data"], validate=True)
        shape = tuple(int(n) for n in entry["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointCorruptError(f"array {name!r} is unreadable: {exc}") from None
    if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise CheckpointCorruptError(f"array {name!r}: {len(raw)} bytes do not fit shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _canonical(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def checkpoint_document(agent, env_cfg):
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "variant": agent.variant,
        "seed": agent.seed,
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "n_sens": agent.n_sens,
        "names": list(agent.names),
        "env": env_cfg.to_dict(),
        "hyper": agent.hyper.to_dict(),
        "total_updates": agent.total_updates,
        "optimizer_steps": {"actor": agent.actor_opt.t, "critic": agent.critic_opt.t},
        "rng": agent.rng_states(),
        "arrays": {k: _encode(v) for k, v in agent.named_arrays().items()},
    }
    doc["checksum"] = hashlib.sha256(_canonical(doc).encode()).hexdigest()
    return doc


def save_checkpoint(agent, env_cfg, path):
    """Atomically write ``agent`` (with its environment config) to ``path``."""
    text = _canonical(checkpoint_document(agent, env_cfg))
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_document(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path} is not a complete checkpoint: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointCorruptError(f"{path} is not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointVersionError(
            f"{path} has schema version {doc.get('version')!r}; this build reads version {VERSION}"
        )
    body = {k: v for k, v in doc.items() if k != "checksum"}
    if hashlib.sha256(_canonical(body).encode()).hexdigest() != doc.get("checksum"):
        raise CheckpointCorruptError(f"{path}: checksum mismatch")
    return doc


def load_checkpoint(path, env_cfg=None, variant=None):
    """Restore a :class:`Td3Agent`; ``agent.env_config`` holds its environment.

    Passing ``env_cfg`` or ``variant`` checks that the checkpoint was written
    for them. Nothing is returned unless every array loaded cleanly.
    """
    doc = read_document(path)
    try:
        saved_env = EnvConfig.from_dict(doc["env"])
        hyper = Td3Hyper.from_dict(doc["hyper"])
        agent = Td3Agent(
            doc["state_dim"], doc["action_dim"], doc["variant"], hyper, doc["seed"],
            n_sens=doc["n_sens"], names=tuple(doc["names"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointCorruptError(f"{path}: invalid metadata ({exc})") from None
    if env_cfg is not None and (
        env_cfg.name != saved_env.name or env_cfg.state_dim != saved_env.state_dim
        or env_cfg.n_actuators != saved_env.n_actuators
    ):
        raise CheckpointMismatchError(
            f"{path} was trained on {saved_env.name!r} (state {saved_env.state_dim}, "
            f"actions {saved_env.n_actuators}); requested {env_cfg.name!r} "
            f"(state {env_cfg.state_dim}, actions {env_cfg.n_actuators})"
        )
    if variant is not None and variant != doc["variant"]:
        raise CheckpointMismatchError(f"{path} holds variant {doc['variant']!r}, not {variant!r}")
    arrays = {k: _decode(v, k) for k, v in doc.get("arrays", {}).items()}
    try:
        agent.load_named_arrays(arrays)
    except ValueError as exc:
        raise CheckpointShapeError(f"{path}: {exc}") from None
    agent.actor_opt.t = int(doc["optimizer_steps"]["actor"])
    agent.critic_opt.t = int(doc["optimizer_steps"]["critic"])
    agent.total_updates = int(doc["total_updates"])
    agent.set_rng_states(doc["rng"])
    agent.env_config = saved_env
    return agent
