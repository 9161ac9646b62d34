"""
CSV and JSON persistence for datasets, solutions, sweep rows and checkpoints.

Every CSV starts with a ``# config_hash=<hex>`` comment line followed by the
header row. Floats are written with 17 significant digits so that files
round-trip exactly and reruns are byte-identical.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from .nuclr import NuclrState, PopularityTrack
from .popularity import PopularitySolution
from .similarity import SimilarityModel, model_from_checkpoint
from .synthetic_world import PairedSample
from ..models.results import Checkpoint, TrackCheckpoint

logger = logging.getLogger(__name__)

HASH_PREFIX = "# config_hash="
PathLike = Union[str, Path]


class DatasetError(ValueError):
    """Raised when a CSV or JSON file cannot be parsed."""
    pass


def format_value(value: Any) -> str:
    """Render one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def write_csv(
    path: PathLike,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    config_hash: str,
) -> Path:
    """Write a hashed CSV file, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{HASH_PREFIX}{config_hash}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.debug(f"Wrote {path}")
    return path


def write_rows(path: PathLike, rows: Sequence[BaseModel], config_hash: str) -> Path:
    """Write pydantic row models; columns follow the model's field order."""
    if not rows:
        raise DatasetError(f"No rows to write to {path}")
    header = list(type(rows[0]).model_fields)
    return write_csv(
        path, header, ([getattr(row, name) for name in header] for row in rows), config_hash
    )


def read_csv(path: PathLike) -> Tuple[Optional[str], List[str], List[Dict[str, str]]]:
    """
    Read a CSV written by ``write_csv`` (the hash line is optional).

    Returns:
        (config hash or None, header, rows as dictionaries)

    Raises:
        DatasetError: If the file is missing or has no header
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    config_hash = None
    if lines and lines[0].startswith(HASH_PREFIX):
        config_hash = lines[0][len(HASH_PREFIX):].strip()
        lines = lines[1:]
    lines = [line for line in lines if line and not line.startswith("#")]
    if not lines:
        raise DatasetError(f"CSV file has no header: {path}")
    reader = csv.DictReader(lines)
    rows = list(reader)
    return config_hash, list(reader.fieldnames or []), rows


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    """Write canonical JSON (sorted keys, two-space indent, trailing newline)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise DatasetError(f"File not found: {path}")
    except json.JSONDecodeError as e:
        raise DatasetError(f"Invalid JSON in {path}: {e}")


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_dataset(sample: PairedSample, path: PathLike, config_hash: str) -> Path:
    """
    Write pairs as columns x1..xd, y1..yd plus a JSON sidecar {n, tau, seed}.

    Returns:
        Path of the CSV file
    """
    path = Path(path)
    d1 = sample.anchors.shape[1]
    d2 = sample.targets.shape[1]
    header = [f"x{k + 1}" for k in range(d1)] + [f"y{k + 1}" for k in range(d2)]
    rows = np.hstack([sample.anchors, sample.targets])
    write_csv(path, header, rows.tolist(), config_hash)
    write_json(_sidecar(path), {"n": sample.n, "tau": sample.tau, "seed": sample.seed})
    return path


def load_dataset(path: PathLike, tau: Optional[float] = None) -> PairedSample:
    """
    Load a paired CSV with x*/y* columns.

    The temperature comes from ``tau`` if given, else from the JSON sidecar.

    Raises:
        DatasetError: If columns are missing, values do not parse, or no
            temperature is available
    """
    path = Path(path)
    _, header, rows = read_csv(path)
    x_cols = sorted((c for c in header if c.startswith("x")), key=lambda c: int(c[1:]))
    y_cols = sorted((c for c in header if c.startswith("y")), key=lambda c: int(c[1:]))
    if not x_cols or not y_cols:
        raise DatasetError(f"Dataset {path} needs x* and y* columns, got {header}")
    if not rows:
        raise DatasetError(f"Dataset {path} has no rows")
    try:
        anchors = np.array([[float(row[c]) for c in x_cols] for row in rows])
        targets = np.array([[float(row[c]) for c in y_cols] for row in rows])
    except (TypeError, ValueError) as e:
        raise DatasetError(f"Non-numeric value in {path}: {e}")

    seed = None
    sidecar = _sidecar(path)
    if sidecar.exists():
        meta = read_json(sidecar)
        seed = meta.get("seed")
        if tau is None:
            tau = meta.get("tau")
    if tau is None:
        raise DatasetError(f"No temperature given and no sidecar found for {path}")
    return PairedSample(anchors=anchors, targets=targets, tau=float(tau), seed=seed)


def save_solution(solution: PopularitySolution, path: PathLike, config_hash: str) -> Path:
    """Write columns index, zeta, qprime."""
    rows = zip(range(solution.n), solution.zeta, solution.qprime)
    return write_csv(path, ["index", "zeta", "qprime"], rows, config_hash)


def _track_payload(track: PopularityTrack) -> TrackCheckpoint:
    return TrackCheckpoint(
        zeta=[float(v) for v in track.zeta],
        u=[float(v) for v in track.u],
        touched=[bool(v) for v in track.touched],
        xi=float(track.xi),
    )


def _track_from_payload(payload: TrackCheckpoint) -> PopularityTrack:
    zeta = np.asarray(payload.zeta, dtype=float)
    return PopularityTrack(
        zeta=zeta,
        u=np.asarray(payload.u, dtype=float),
        touched=np.asarray(payload.touched, dtype=bool),
        xi=payload.xi,
        velocity=np.zeros_like(zeta),
    )


def save_checkpoint(
    path: PathLike, model: SimilarityModel, state: NuclrState, config_hash: str
) -> Path:
    """Write the model payload and the zeta/u/xi state as JSON."""
    checkpoint = Checkpoint(
        model=model.to_checkpoint(),
        forward=_track_payload(state.forward),
        reverse=None if state.reverse is None else _track_payload(state.reverse),
        step=state.step,
        config_hash=config_hash,
    )
    return write_json(path, checkpoint.model_dump(mode="json"))


def load_checkpoint(path: PathLike) -> Tuple[SimilarityModel, NuclrState]:
    """
    Rebuild a model and training state from a checkpoint file.

    Optimizer buffers are not stored and come back zeroed.

    Raises:
        DatasetError: If the file does not match the checkpoint schema
    """
    try:
        checkpoint = Checkpoint(**read_json(path))
    except ValidationError as e:
        raise DatasetError(f"Invalid checkpoint {path}: {e}")
    model = model_from_checkpoint(checkpoint.model)
    params = model.params
    state = NuclrState(
        params=params,
        forward=_track_from_payload(checkpoint.forward),
        reverse=None if checkpoint.reverse is None else _track_from_payload(checkpoint.reverse),
        step=checkpoint.step,
        w_velocity=np.zeros_like(params),
        w_second=np.zeros_like(params),
    )
    return model, state
