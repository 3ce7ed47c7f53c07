"""
Run outputs: CSV tables, coefficient files and checksummed manifests
"""

import csv
import hashlib
import json
import logging
import math
import time
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import __version__
from .config import config_hash, settings
from .discretization import OperatorSet
from .exceptions import BasisMismatch, ConfigurationError, NonFiniteOutput
from .models import FileRecord, RunConfig, RunManifest
from .modal import ModalBasis
from .steady import Branch, SteadyState

logger = logging.getLogger(__name__)

BRANCH_INDEX = "branch.json"
MODES_FILE = "modes.npz"
MANIFEST_FILE = "manifest.json"

def format_number(value: Any, digits: Optional[int] = None) -> str:
    """17 significant digits, 'inf' for infinities; NaN is rejected"""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        raise NonFiniteOutput("NaN in numeric output")
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, f".{digits or settings.CSV_DIGITS}g")

def write_csv(file_path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write a table; every cell is formatted before the file is opened.

    Raises:
        NonFiniteOutput: if any value is NaN (nothing is written)
    """
    path = Path(file_path)
    formatted = [[format_number(v) for v in row] for row in rows]
    for row in formatted:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(formatted)
    logger.debug(f"Wrote {len(formatted)} rows to {path}")
    return path

def read_csv(file_path: Union[str, Path]) -> Tuple[List[str], List[List[str]]]:
    with Path(file_path).open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]

def write_json(file_path: Union[str, Path], payload: Any) -> Path:
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2, default=str)
        f.write("\n")
    return path

def sha256_file(file_path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with Path(file_path).open("rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()

# ---------------------------------------------------------------------------
# Branch and basis files
# ---------------------------------------------------------------------------

def save_branch(branch: Branch, directory: Union[str, Path]) -> List[Path]:
    """One .npz per state plus a JSON index with lambda, R, h, residuals, chi0 and forces"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files, index = [], []
    for i, s in enumerate(branch.states):
        name = f"state_{i:04d}.npz"
        np.savez(directory / name, x=s.x, u_full=s.u_full, pi=s.pi, chi0=s.chi0, force=s.force)
        files.append(directory / name)
        index.append({
            "file": name, "lam": s.lam, "R": s.R, "h": s.h, "residual": s.residual,
            "iterations": s.iterations, "chi0": [float(c) for c in s.chi0],
            "drag": s.drag, "lift": s.lift,
        })
    files.append(write_json(directory / BRANCH_INDEX, {"states": index, "bisected": branch.bisected}))
    logger.info(f"Saved branch of {len(branch)} states to {directory}")
    return files

def load_branch(directory: Union[str, Path], opset: OperatorSet) -> Branch:
    """
    Read a branch written by save_branch onto the operators of the same mesh.

    Raises:
        ConfigurationError: if the directory or its index is missing
        BasisMismatch: if the stored states do not fit the space of opset
    """
    directory = Path(directory)
    index_path = directory / BRANCH_INDEX
    if not index_path.is_file():
        raise ConfigurationError(f"Branch directory not found or incomplete: {directory}")
    with index_path.open(encoding="utf-8") as f:
        index = json.load(f)
    space = opset.space
    states = []
    for entry in index["states"]:
        data = np.load(directory / entry["file"])
        if data["x"].shape != (space.n_dofs,):
            raise BasisMismatch(f"{entry['file']} has {data['x'].shape[0]} unknowns, space has {space.n_dofs}")
        states.append(SteadyState(
            lam=entry["lam"], x=data["x"], u_full=data["u_full"], pi=data["pi"], chi0=data["chi0"],
            force=data["force"], residual=entry["residual"], iterations=entry["iterations"],
            R=entry["R"], h=entry["h"], opset=opset,
        ))
    return Branch(states=states, bisected=list(index.get("bisected", [False] * len(states))))

def save_modes(basis: ModalBasis, directory: Union[str, Path], report: Optional[Dict[str, Any]] = None) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MODES_FILE
    np.savez(path, eigenvalues=basis.eigenvalues, modes=basis.modes, pressures=basis.pressures)
    index = {
        "N": basis.count,
        "eigenvalues": [float(m) for m in basis.eigenvalues],
        "clustered": basis.clustered,
        "gram_residual": basis.gram_residual,
        "report": report or {},
    }
    return [path, write_json(directory / "modes.json", index)]

def load_modes(directory: Union[str, Path], opset: OperatorSet) -> ModalBasis:
    data = np.load(Path(directory) / MODES_FILE)
    if data["modes"].shape[0] != opset.space.n_dofs:
        raise BasisMismatch(f"stored modes have {data['modes'].shape[0]} rows, space has {opset.space.n_dofs}")
    V = data["modes"]
    gram = V.T @ (opset.M_w @ V)
    return ModalBasis(opset=opset, eigenvalues=data["eigenvalues"], modes=V, pressures=data["pressures"],
                      gram_residual=float(np.abs(gram - np.eye(V.shape[1])).max()))

# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

class RunRecorder:
    """Collects emitted files, stage timings and monitor verdicts of one CLI run"""

    def __init__(self, command: str, config: RunConfig, out_dir: Union[str, Path], seed: int):
        self.command = command
        self.config = config
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.files: List[Path] = []
        self.timings: Dict[str, float] = {}
        self.monitors: Dict[str, bool] = {}
        self.details: Dict[str, Any] = {}
        self.out_dir.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        logger.info(f"Stage {name} started")
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - start
            logger.info(f"Stage {name} finished in {self.timings[name]:.2f}s")

    def add(self, *paths: Union[str, Path, Sequence[Path]]):
        for p in paths:
            if isinstance(p, (list, tuple)):
                self.add(*p)
            elif p is not None:
                self.files.append(Path(p))

    def monitor(self, name: str, passed: bool):
        self.monitors[name] = bool(passed)

    def write(self) -> Path:
        records = []
        for p in self.files:
            if p.is_file():
                rel = p.relative_to(self.out_dir) if p.is_relative_to(self.out_dir) else p
                records.append(FileRecord(path=str(rel), sha256=sha256_file(p)))
        manifest = RunManifest(
            command=self.command, config_hash=config_hash(self.config), version=__version__,
            seed=self.seed, created_at=datetime.now(), timings=self.timings, files=records,
            monitors=self.monitors, details=self.details,
        )
        path = write_json(self.out_dir / MANIFEST_FILE, manifest.model_dump(mode="json"))
        logger.info(f"Manifest with {len(records)} files written to {path}")
        return path

def verify_manifest(manifest_path: Union[str, Path]) -> List[str]:
    """Paths whose current checksum differs from the recorded one (missing files included)"""
    manifest_path = Path(manifest_path)
    with manifest_path.open(encoding="utf-8") as f:
        manifest = RunManifest.model_validate(json.load(f))
    bad = []
    for record in manifest.files:
        p = Path(record.path)
        p = p if p.is_absolute() else manifest_path.parent / p
        if not p.is_file() or sha256_file(p) != record.sha256:
            bad.append(record.path)
    return bad
