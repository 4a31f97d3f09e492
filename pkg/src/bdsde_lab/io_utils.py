"""Deterministic CSV and manifest emission shared by all experiments.

CSV dialect: comma-separated, header row, '.' decimal, fixed column order per
artifact type. Floats are written with repr (shortest round-trip), so a rerun
with identical config and seed reproduces files byte for byte.
"""

from __future__ import annotations

import csv
import os

import numpy as np
import yaml


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows, columns):
    """Write dict rows with a fixed column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c, "")) for c in columns])
    return path


def write_field_csv(path, times, nodes, values):
    """Long-format field table: (t, x..., value)."""
    d = nodes.shape[1]
    cols = ["t"] + [f"x{i}" for i in range(d)] + ["value"]
    rows = []
    for k, t in enumerate(times):
        for m in range(nodes.shape[0]):
            row = {"t": t, "value": values[k, m]}
            for i in range(d):
                row[f"x{i}"] = nodes[m, i]
            rows.append(row)
    return write_csv(path, rows, cols)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def write_manifest(out_dir, resolved_config, outputs, extra=None):
    """Manifest echoing the fully resolved config and every output file path."""
    manifest = {
        "config": _plain(resolved_config),
        "outputs": sorted(os.path.basename(p) for p in outputs),
    }
    if extra:
        manifest["results"] = _plain(extra)
    path = os.path.join(out_dir, "manifest.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
    return path


def write_error_record(out_dir, code, message):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "error.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump({"exit_code": int(code), "error": str(message)}, fh, sort_keys=True)
    return path
