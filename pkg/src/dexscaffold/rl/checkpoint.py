"""Versioned policy checkpoints: parameters, normaliser moments, config hash."""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .network import MLP, ActorCritic
from .normalizer import RunningNormalizer

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net: ActorCritic, normalizer: RunningNormalizer, config_hash: str,
                    meta: dict | None = None) -> Path:
    """Write an ``.npz`` atomically; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"log_std": net.log_std, "norm_mean": normalizer.mean, "norm_var": normalizer.var,
              "norm_count": np.array(normalizer.count)}
    for tag, mlp in (("actor", net.actor), ("critic", net.critic)):
        for i, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
            arrays[f"{tag}_W{i}"] = W
            arrays[f"{tag}_b{i}"] = b
    header = {"version": CHECKPOINT_VERSION, "config_hash": config_hash,
              "actor_layers": len(net.actor.weights), "critic_layers": len(net.critic.weights),
              "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expect_hash: str | None = None):
    """Returns ``(net, normalizer, header)``; the normaliser comes back in eval mode."""
    try:
        with np.load(Path(path)) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
            mlps = []
            for tag in ("actor", "critic"):
                n = header[f"{tag}_layers"]
                mlps.append(MLP([data[f"{tag}_W{i}"].copy() for i in range(n)],
                                [data[f"{tag}_b{i}"].copy() for i in range(n)]))
            net = ActorCritic(mlps[0], mlps[1], data["log_std"].copy())
            norm = RunningNormalizer(data["norm_mean"].copy(), data["norm_var"].copy(),
                                     float(data["norm_count"]), training=False)
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if expect_hash is not None and header["config_hash"] != expect_hash:
        raise CheckpointError("checkpoint was trained with a different configuration")
    return net, norm, header
