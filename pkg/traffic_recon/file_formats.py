"""
file_formats.py - Reading and writing every on-disk format

    network JSON         {"vertices": [...], "edges": [[id, id], ...], "coordinates": {...}}
    model JSON           {"eta", "epsilon", "lambda", "beta", "road_ids", "graph_fingerprint", "format_version"}
    snapshot CSV         header road_<id>,... in label order; one complete snapshot per row
    partial CSV          road_id,value; a missing row or empty value means unobserved
    reconstruction CSV   road_id,estimate,observed
    sidecar JSON         <file>.meta.json with generation metadata

Road ids are read back as strings.
"""

import json
import logging
import os

import numpy as np
import pandas as pd

from .errors import StructuralError, ValidationError
from .gmrf import MODEL_FORMAT_VERSION, Model, PartialSnapshot
from .road_graph import build_graph

logger = logging.getLogger(__name__)

SNAPSHOT_PREFIX = "road_"
EXACT_FLOAT_FORMAT = "%.17g"
REPORT_FLOAT_FORMAT = "%.6g"
SIDECAR_SUFFIX = ".meta.json"


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _load_json(path, what):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{what} file {path} is not valid JSON: {e}") from e


def _dump_json(path, payload):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def string_index(g):
    """Map str(road id) to internal index."""
    return {str(label): idx for idx, label in enumerate(g.labels)}


# --- Network ---

def read_network(path):
    payload = _load_json(path, "Network")
    if not isinstance(payload, dict) or "edges" not in payload:
        raise StructuralError(f"Network file {path} must be an object with an 'edges' list")
    try:
        pairs = [(str(a), str(b)) for a, b in payload["edges"]]
    except (TypeError, ValueError):
        raise StructuralError(f"Every edge in {path} must be a pair of road ids") from None
    vertices = [str(v) for v in payload.get("vertices", [])]
    metadata = {}
    if "coordinates" in payload:
        metadata["coordinates"] = {str(k): [float(c) for c in v] for k, v in payload["coordinates"].items()}
    graph = build_graph(pairs, vertices=vertices, metadata=metadata)
    logger.info(f"Loaded network {path}: {graph.n} roads, {graph.num_edges} edges")
    return graph


def write_network(g, path):
    payload = {
        "vertices": [str(label) for label in g.labels],
        "edges": [[str(g.labels[i]), str(g.labels[j])] for i, j in g.edges.tolist()],
    }
    coordinates = g.metadata.get("coordinates")
    if coordinates:
        payload["coordinates"] = {str(k): list(v) for k, v in coordinates.items()}
    _dump_json(path, payload)
    logger.info(f"Wrote network with {g.n} roads to {path}")


# --- Model ---

def model_to_dict(m):
    payload = {
        "eta": float(m.eta),
        "epsilon": float(m.epsilon),
        "lambda": float(m.lambda_used),
        "beta": [float(b) for b in m.beta],
        "graph_fingerprint": m.graph_fingerprint,
        "format_version": m.format_version,
    }
    if m.road_ids is not None:
        payload["road_ids"] = list(m.road_ids)
    return payload


def model_from_dict(payload):
    try:
        return Model(
            beta=np.asarray(payload["beta"], dtype=float),
            eta=float(payload["eta"]),
            epsilon=float(payload["epsilon"]),
            lambda_used=float(payload["lambda"]),
            graph_fingerprint=str(payload["graph_fingerprint"]),
            format_version=int(payload.get("format_version", MODEL_FORMAT_VERSION)),
            road_ids=payload.get("road_ids"),
        )
    except KeyError as e:
        raise ValidationError(f"Model file is missing field {e}") from None
    except (TypeError, ValueError) as e:
        raise ValidationError(f"Model file has a malformed field: {e}") from e


def read_model(path):
    return model_from_dict(_load_json(path, "Model"))


def write_model(m, path):
    # files are read back with text road ids, so beta must say which road it belongs to
    if m.road_ids is None:
        raise ValidationError("Model needs road_ids before it can be written to a file")
    _dump_json(path, model_to_dict(m))
    logger.info(f"Wrote model to {path}")


# --- Snapshots ---

def read_snapshots(path, g):
    """Load a snapshot CSV as a (K, N) array in the network's vertex order."""
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise ValidationError(f"Snapshot file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise ValidationError(f"Snapshot file {path} is empty") from None

    columns = {}
    for column in df.columns:
        if not str(column).startswith(SNAPSHOT_PREFIX):
            raise ValidationError(f"Snapshot column {column!r} does not start with '{SNAPSHOT_PREFIX}'")
        columns[str(column)[len(SNAPSHOT_PREFIX):]] = column

    expected = [str(label) for label in g.labels]
    missing = [road for road in expected if road not in columns]
    extra = [road for road in columns if road not in set(expected)]
    if missing or extra:
        raise StructuralError(
            f"Snapshot columns do not match the network (missing {missing[:5]}, unknown {extra[:5]})"
        )

    values = df[[columns[road] for road in expected]].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"Snapshot file {path} has empty or non-numeric values")
    logger.info(f"Loaded {values.shape[0]} snapshots from {path}")
    return values


def write_snapshots(values, g, path):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    df = pd.DataFrame(values, columns=[f"{SNAPSHOT_PREFIX}{label}" for label in g.labels])
    _ensure_parent(path)
    df.to_csv(path, index=False, float_format=EXACT_FLOAT_FORMAT)
    logger.info(f"Wrote {len(df)} snapshots to {path}")


# --- Partial snapshots ---

def read_partial(path, g):
    """Load a road_id,value CSV; roads without a value are unobserved."""
    try:
        df = pd.read_csv(path, dtype={"road_id": str}, float_precision="round_trip")
    except FileNotFoundError:
        raise ValidationError(f"Partial snapshot file not found: {path}") from None
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=["road_id", "value"])
    if list(df.columns[:2]) != ["road_id", "value"]:
        raise ValidationError(f"Partial snapshot {path} must have columns road_id,value")

    index = string_index(g)
    unknown = [road for road in df["road_id"] if road not in index]
    if unknown:
        raise StructuralError(f"Partial snapshot names unknown roads: {unknown[:5]}")
    duplicated = df["road_id"][df["road_id"].duplicated()].tolist()
    if duplicated:
        raise ValidationError(f"Partial snapshot lists roads more than once: {duplicated[:5]}")

    values = pd.to_numeric(df["value"], errors="coerce")
    bad = df["value"].notna() & values.isna()
    if bad.any():
        raise ValidationError(f"Partial snapshot has non-numeric values for roads {df['road_id'][bad].tolist()[:5]}")

    present = values.notna()
    observed = {index[road]: float(v) for road, v in zip(df["road_id"][present], values[present])}
    snapshot = PartialSnapshot.from_mapping(g.n, observed)
    logger.info(f"Loaded partial snapshot: {len(observed)} observed, {g.n - len(observed)} unobserved")
    return snapshot


def write_partial(s, g, path):
    """Write every road; unobserved roads get an empty value."""
    values = np.full(g.n, np.nan)
    values[s.observed_index] = s.observed_values
    df = pd.DataFrame({"road_id": [str(label) for label in g.labels], "value": values})
    _ensure_parent(path)
    df.to_csv(path, index=False, float_format=EXACT_FLOAT_FORMAT, na_rep="")
    logger.info(f"Wrote partial snapshot ({len(s.unobserved)} unobserved) to {path}")


# --- Reconstructions ---

def reconstruction_frame(result, g):
    observed = np.ones(g.n, dtype=int)
    observed[result.unobserved] = 0
    return pd.DataFrame({
        "road_id": [str(label) for label in g.labels],
        "estimate": result.estimates,
        "observed": observed,
    })


def write_reconstruction(result, g, path):
    df = reconstruction_frame(result, g)
    _ensure_parent(path)
    df.to_csv(path, index=False, float_format=REPORT_FLOAT_FORMAT)
    logger.info(f"Wrote reconstruction of {g.n} roads to {path}")


def read_reconstruction(path):
    try:
        df = pd.read_csv(path, dtype={"road_id": str})
    except FileNotFoundError:
        raise ValidationError(f"Reconstruction file not found: {path}") from None
    missing = {"road_id", "estimate", "observed"} - set(df.columns)
    if missing:
        raise ValidationError(f"Reconstruction file {path} is missing columns {sorted(missing)}")
    if df["estimate"].isna().any():
        raise ValidationError(f"Reconstruction file {path} has empty estimates")
    return df


# --- Sidecars ---

def sidecar_path(path):
    return f"{path}{SIDECAR_SUFFIX}"


def write_sidecar(path, metadata):
    _dump_json(sidecar_path(path), metadata)


def read_sidecar(path):
    target = sidecar_path(path)
    if not os.path.exists(target):
        return None
    return _load_json(target, "Metadata")


def write_json(path, payload):
    _dump_json(path, payload)
