"""On-disk path cache: one columnar .npz per scenario batch plus a JSON sidecar.

The cache key is a hash of the canonical simulation config (model parameters,
fine-grid size, sample count, seed, exercise count), so identical requests hit
the same file.  Writes are serialized through a lock file.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import __version__
from .errors import ConfigError
from .models import ModelParams, PathBatch, simulate

DEFAULT_CACHE_ENV = "SIGSTOP_CACHE_DIR"
_FORMAT = 1


def cache_dir(override: str | os.PathLike | None = None) -> Path:
    if override is not None:
        return Path(override)
    return Path(os.environ.get(DEFAULT_CACHE_ENV, ".sigstop-cache"))


def batch_key(params: ModelParams, n_fine: int, m: int, seed: int,
              n_exercise: int, antithetic: bool) -> str:
    cfg = {
        "params": params.canonical(),
        "n_fine": int(n_fine),
        "m": int(m),
        "seed": int(seed),
        "n_exercise": int(n_exercise),
        "antithetic": bool(antithetic),
    }
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _paths_for(key: str, root: Path) -> tuple[Path, Path]:
    return root / f"{key}.npz", root / f"{key}.json"


def store_batch(batch: PathBatch, n_exercise: int, root: Path) -> str:
    root.mkdir(parents=True, exist_ok=True)
    key = batch_key(batch.params, batch.n_fine, batch.n_paths, batch.seed,
                    n_exercise, batch.antithetic)
    npz, sidecar = _paths_for(key, root)
    with FileLock(str(root / "cache.lock")):
        np.savez_compressed(
            npz, S=batch.S, X=batch.X, v=batch.v, W=batch.W, B=batch.B,
            times=batch.times, exercise_idx=batch.exercise_idx,
        )
        meta = {
            "format": _FORMAT,
            "version": __version__,
            "key": key,
            "params": batch.params.canonical(),
            "n_fine": batch.n_fine,
            "m": batch.n_paths,
            "seed": batch.seed,
            "n_exercise": n_exercise,
            "antithetic": batch.antithetic,
        }
        sidecar.write_text(json.dumps(meta, sort_keys=True, indent=1))
    return key


def load_batch(key: str, root: Path) -> PathBatch | None:
    npz, sidecar = _paths_for(key, root)
    if not npz.exists() or not sidecar.exists():
        return None
    try:
        meta = json.loads(sidecar.read_text())
        if meta.get("format") != _FORMAT:
            return None
        with np.load(npz) as data:
            params = ModelParams(**meta["params"])
            return PathBatch(
                params, data["times"], data["exercise_idx"],
                data["S"], data["X"], data["v"], data["W"], data["B"],
                int(meta["seed"]), bool(meta["antithetic"]),
            )
    except (KeyError, ValueError, json.JSONDecodeError, OSError):
        return None  # corrupted entry; caller regenerates


def get_or_simulate(params: ModelParams, n_fine: int, m: int, seed: int,
                    *, n_exercise: int = 12, antithetic: bool = False,
                    root: str | os.PathLike | None = None,
                    force: bool = False, use_cache: bool = True) -> PathBatch:
    """Return the cached batch or simulate (and cache) it."""
    if not use_cache:
        return simulate(params, n_fine, m, seed,
                        n_exercise=n_exercise, antithetic=antithetic)
    rootp = cache_dir(root)
    key = batch_key(params, n_fine, m, seed, n_exercise, antithetic)
    if not force:
        hit = load_batch(key, rootp)
        if hit is not None:
            return hit
    batch = simulate(params, n_fine, m, seed,
                     n_exercise=n_exercise, antithetic=antithetic)
    store_batch(batch, n_exercise, rootp)
    return batch


def list_entries(root: str | os.PathLike | None = None) -> list[dict]:
    rootp = cache_dir(root)
    out = []
    for sidecar in sorted(rootp.glob("*.json")):
        try:
            out.append(json.loads(sidecar.read_text()))
        except (json.JSONDecodeError, OSError):
            out.append({"key": sidecar.stem, "corrupt": True})
    return out


def clear(root: str | os.PathLike | None = None) -> int:
    rootp = cache_dir(root)
    if not rootp.exists():
        return 0
    n = 0
    with FileLock(str(rootp / "cache.lock")):
        for f in rootp.glob("*.npz"):
            f.unlink()
            n += 1
        for f in rootp.glob("*.json"):
            f.unlink()
    return n
