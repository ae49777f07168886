"""Model documents, result tables, config files and provenance headers."""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from . import __version__
from .config import settings
from .errors import InputError
from .laplace import FittedModel, restore_model
from .models import FidelityDataset, GroundTruth, Hyperparams, LaplaceConfig, RunConfig, SfDataset
from .single_fidelity import SfModel

logger = logging.getLogger(__name__)

MODEL_FORMAT = "mfgpc-model"


def provenance(command: str, flags: Optional[Dict[str, Any]] = None, seed: Optional[int] = None) -> Dict[str, Any]:
    """Tool version, command, flag set and master seed. No timestamps."""
    return {
        "tool": f"mfgpc {__version__}",
        "command": command,
        "seed": seed,
        "flags": {k: _jsonable(v) for k, v in sorted((flags or {}).items())},
    }


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def provenance_lines(info: Dict[str, Any]) -> List[str]:
    return [f"# {key}: {json.dumps(value, sort_keys=True)}" for key, value in info.items()]


class ModelDocument(BaseModel):
    format: Literal["mfgpc-model"] = MODEL_FORMAT
    version: int = 1
    fidelity_count: Literal[1, 2]
    hyper: Hyperparams
    laplace: LaplaceConfig
    dim: int = Field(ge=0)
    X_L: List[List[float]]
    y_L: List[int]
    X_H: List[List[float]]
    y_H: List[int]
    checksum: str
    xi_hat: List[float]
    alpha: Optional[List[float]] = None
    newton_iters: int
    converged: bool
    log_marginal: float
    psi_trace: List[float] = Field(default_factory=list)
    provenance: Dict[str, Any] = Field(default_factory=dict)


def model_document(model: Union[FittedModel, SfModel], info: Optional[Dict[str, Any]] = None) -> ModelDocument:
    fidelity_count = 1 if isinstance(model, SfModel) else 2
    fitted = model.inner if isinstance(model, SfModel) else model
    data = fitted.data
    return ModelDocument(
        fidelity_count=fidelity_count,
        hyper=fitted.hyper,
        laplace=fitted.config,
        dim=data.dim,
        X_L=data.X_L.tolist(),
        y_L=data.y_L.tolist(),
        X_H=data.X_H.tolist(),
        y_H=data.y_H.tolist(),
        checksum=data.checksum(),
        xi_hat=fitted.xi_hat.values.tolist(),
        alpha=fitted.alpha.tolist(),
        newton_iters=fitted.newton_iters,
        converged=fitted.converged,
        log_marginal=fitted.log_marginal,
        psi_trace=list(fitted.psi_trace),
        provenance=info or {},
    )


def save_model(model: Union[FittedModel, SfModel], path, info: Optional[Dict[str, Any]] = None) -> ModelDocument:
    document = model_document(model, info)
    Path(path).write_text(document.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return document


def load_model(path) -> Union[FittedModel, SfModel]:
    """Rebuild a model from its stored mode; the training data must match the stored checksum."""
    path = Path(path)
    try:
        document = ModelDocument.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from exc
    except ValidationError as exc:
        raise InputError(f"{path} is not a valid model document: {exc}") from exc

    def matrix(rows):
        return np.array(rows, dtype=float).reshape(-1, document.dim)

    data = FidelityDataset(matrix(document.X_L), document.y_L, matrix(document.X_H), document.y_H)
    if data.checksum() != document.checksum:
        raise InputError(f"{path}: training data checksum mismatch")

    fitted = restore_model(
        data,
        document.hyper,
        document.xi_hat,
        document.laplace,
        newton_iters=document.newton_iters,
        converged=document.converged,
        psi_trace=tuple(document.psi_trace),
        alpha=document.alpha,
    )
    if not math.isclose(fitted.log_marginal, document.log_marginal, rel_tol=0.0, abs_tol=1e-10):
        logger.warning("%s: recomputed log marginal %.17g differs from stored %.17g",
                       path, fitted.log_marginal, document.log_marginal)
    if document.fidelity_count == 1:
        return SfModel(data=SfDataset(data.X_L, data.y_L), params=document.hyper.theta_l, inner=fitted)
    return fitted


class GroundTruthDocument(BaseModel):
    provenance: Dict[str, Any] = Field(default_factory=dict)
    truth: GroundTruth


def save_ground_truth(truth: GroundTruth, path, info: Optional[Dict[str, Any]] = None) -> None:
    document = GroundTruthDocument(provenance=info or {}, truth=truth)
    Path(path).write_text(document.model_dump_json(indent=2) + "\n", encoding="utf-8")


def load_ground_truth(path) -> GroundTruth:
    try:
        return GroundTruthDocument.model_validate_json(Path(path).read_text(encoding="utf-8")).truth
    except (OSError, ValidationError) as exc:
        raise InputError(f"cannot load ground truth from {path}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        return RunConfig.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    except ValidationError as exc:
        raise InputError(f"invalid config file {path}: {exc}") from exc


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), settings.float_format)
    return str(value)


def write_table(path, columns: Sequence[str], rows: Iterable[Dict[str, Any]], info: Optional[Dict[str, Any]] = None) -> int:
    """Comma-delimited table with provenance comment lines; returns the row count."""
    count = 0
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        for line in provenance_lines(info or {}):
            handle.write(line + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(column)) for column in columns])
            count += 1
    return count


def read_table(path) -> List[Dict[str, str]]:
    path = Path(path)
    try:
        with path.open("r", newline="", encoding="utf-8") as handle:
            lines = [line for line in handle if line.strip() and not line.startswith("#")]
    except OSError as exc:
        raise InputError(f"cannot read table {path}: {exc}") from exc
    return list(csv.DictReader(lines))
