"""Draw files: a CSV of draws plus a JSON sidecar.

The CSV has columns ``chain,iteration,<parameter names...>``; ``chain`` counts
from 1 and ``iteration`` is the post-warm-up iteration the draw was kept at
(``thin``, ``2 * thin``, ...).  Floats are written with ``repr`` so a round
trip is exact.  The sidecar holds the model name, configuration, RNG
algorithm, fixed quantities, divergence counts, sampler statistics and the
R-hat/ESS table.  Both files are byte-identical for identical runs.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..errors import MissingDrawsFile, ParseError, SchemaError
from .config import FitConfig
from .draws import PosteriorDraws

__all__ = ["write_draws", "read_draws", "sidecar_path", "to_jsonable", "dump_json"]


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".json")


def to_jsonable(obj):
    """Convert numpy containers and non-finite floats (to ``None``) for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj, path=None) -> str:
    """Deterministic JSON text (sorted keys, trailing newline); written if ``path``."""
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def write_draws(draws: PosteriorDraws, csv_path, sidecar=None) -> tuple[Path, Path]:
    """Write the draw CSV and its JSON sidecar; returns both paths."""
    csv_path = Path(csv_path)
    sidecar = Path(sidecar) if sidecar is not None else sidecar_path(csv_path)
    cfg = draws.config
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration", *draws.parameter_names])
        for c in range(draws.n_chains):
            for k in range(draws.draws.shape[1]):
                it = (k + 1) * cfg.thin
                w.writerow([c + 1, it, *(repr(float(v)) for v in draws.draws[c, k])])
    meta = {
        "model": draws.model,
        "parameter_names": draws.parameter_names,
        "config": cfg.to_dict(),
        "rng": draws.sampler_stats.get("rng"),
        "fixed": draws.fixed,
        "divergences": draws.divergences,
        "sampler_stats": {k: v for k, v in draws.sampler_stats.items() if k not in ("rng", "divergent")},
        "diagnostics": draws.diagnostics,
        "converged": draws.converged,
    }
    dump_json(meta, sidecar)
    return csv_path, sidecar


def read_draws(csv_path, sidecar=None) -> PosteriorDraws:
    """Load a draw file written by :func:`write_draws`.

    Raises
    ------
    MissingDrawsFile
        Either file is absent.
    SchemaError, ParseError
        The CSV does not match its sidecar.
    """
    csv_path = Path(csv_path)
    sidecar = Path(sidecar) if sidecar is not None else sidecar_path(csv_path)
    for p in (csv_path, sidecar):
        if not p.is_file():
            raise MissingDrawsFile(f"draws file not found: {p}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    cfg_d = dict(meta["config"])
    priors = cfg_d.pop("priors", {})
    config = FitConfig(**cfg_d, priors=priors)
    names = meta["parameter_names"]
    with csv_path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["chain", "iteration"] or rows[0][2:] != names:
        raise SchemaError("draw CSV header does not match the sidecar")
    chains: dict[int, list] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(names) + 2:
            raise ParseError(lineno, "wrong number of fields")
        try:
            chains.setdefault(int(row[0]), []).append([float(v) for v in row[2:]])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    arr = np.array([chains[c] for c in sorted(chains)], dtype=float)
    if arr.ndim != 3:
        arr = arr.reshape(len(chains), -1, len(names))
    stats = dict(meta.get("sampler_stats", {}))
    stats["rng"] = meta.get("rng")
    return PosteriorDraws(names, arr, config, np.asarray(meta["divergences"]), stats,
                          meta.get("fixed", {}), meta.get("model", "custom"))
