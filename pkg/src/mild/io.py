"""Text formats: comma-delimited UTF-8 tables with a header row and LF endings.

Floats are written with 9 significant digits. Expert and class columns are
1-based (``cost_1``, ``ratio_1``, ``label``).
"""

import csv
import json
import os

import numpy as np

from .core import CostTensor, CostType, Dataset, ExpertPanel, Router
from .exceptions import InvalidInputError
from .features import make_feature_map


def fmt(value):
    """Canonical cell text: integers as is, floats to 9 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def write_table(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_table(path):
    """Return ``(header, rows)`` with every cell as a string."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    for r in rows:
        if len(r) != len(header):
            raise InvalidInputError(f"{path}: row has {len(r)} cells, header has {len(header)}")
    return header, rows


def _columns(header, prefix):
    idx = [i for i, h in enumerate(header) if h.startswith(prefix)]
    return sorted(idx, key=lambda i: int(header[i][len(prefix):]))


def _float_block(rows, cols):
    return np.array([[float(r[i]) for i in cols] for r in rows], dtype=float).reshape(len(rows), len(cols))


def write_dataset(path, dataset):
    d = dataset.features.shape[1]
    header = [f"x_{j}" for j in range(1, d + 1)] + ["label"]
    dist = dataset.conditional_label_dist
    if dist is not None:
        header += [f"prob_{y}" for y in range(1, dataset.n_classes + 1)]
    rows = []
    for i in range(len(dataset)):
        row = [*dataset.features[i], int(dataset.labels[i])]
        if dist is not None:
            row += list(dist[i])
        rows.append(row)
    write_table(path, header, rows)


def read_dataset(path, n_classes=None):
    header, rows = read_table(path)
    if "label" not in header:
        raise InvalidInputError(f"{path}: missing label column")
    X = _float_block(rows, _columns(header, "x_"))
    y = np.array([int(r[header.index("label")]) for r in rows], dtype=int)
    prob_cols = _columns(header, "prob_")
    dist = _float_block(rows, prob_cols) if prob_cols else None
    if n_classes is None:
        n_classes = len(prob_cols) if prob_cols else int(y.max(initial=1))
    return Dataset(X, y, n_classes, dist)


def write_panel(path, panel):
    p = panel.n_experts
    write_table(path, [f"pred_{k}" for k in range(1, p + 1)], panel.predictions.tolist())


def read_panel(path, beta, n_classes):
    header, rows = read_table(path)
    cols = _columns(header, "pred_")
    preds = np.array([[int(r[i]) for i in cols] for r in rows], dtype=int)
    return ExpertPanel(preds, beta, n_classes)


def write_costs(path, costs):
    values = costs.values if isinstance(costs, CostTensor) else np.asarray(costs)
    write_table(path, [f"cost_{k}" for k in range(1, values.shape[1] + 1)], values.tolist())


def read_costs(path, cost_type=CostType.ERROR_ONLY, normalizer=1.0):
    header, rows = read_table(path)
    return CostTensor(_float_block(rows, _columns(header, "cost_")), cost_type, normalizer)


def trace_header(p):
    return ["epoch", "objective", "val_dl"] + [f"ratio_{k}" for k in range(1, p + 1)]


def write_trace(path, trace, p):
    rows = [[r.epoch, r.objective, r.val_dl, *r.ratios] for r in trace]
    write_table(path, trace_header(p), rows)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return [_json_default(v) for v in obj.tolist()] if obj.ndim else _json_default(obj.item())
    if isinstance(obj, (np.floating, float)):
        return float(f"{float(obj):.9g}")
    if isinstance(obj, np.integer):
        return int(obj)
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_router(directory, router, rhos, feature_params, n_inputs):
    """Write ``weights.csv`` and ``model.json`` describing ``router``."""
    os.makedirs(directory, exist_ok=True)
    D = router.weights.shape[1]
    write_table(
        os.path.join(directory, "weights.csv"),
        ["expert"] + [f"w_{j}" for j in range(1, D + 1)],
        [[k + 1, *row] for k, row in enumerate(router.weights)],
    )
    meta = {"feature_map": feature_params, "n_inputs": int(n_inputs), "rho": list(map(float, rhos))}
    write_json(os.path.join(directory, "model.json"), meta)


def load_router(directory):
    meta = read_json(os.path.join(directory, "model.json"))
    header, rows = read_table(os.path.join(directory, "weights.csv"))
    W = _float_block(rows, _columns(header, "w_"))
    fp = meta["feature_map"]
    fmap = make_feature_map(fp["kind"], fp["bandwidth"], fp["output_dim"], fp["seed"])
    fmap.fit(np.zeros((1, meta["n_inputs"])))
    return Router(W, fmap), np.array(meta["rho"], dtype=float)


def write_instance(path, instance):
    """Long format: one row per (point, label) with that label's cost row."""
    p = instance.n_experts
    lo, hi, step = instance.score_grid
    header = ["point", "marginal", "label", "label_prob"] + [f"cost_{k}" for k in range(1, p + 1)]
    header += ["grid_lo", "grid_hi", "grid_step"]
    rows = []
    for i in range(instance.n_points):
        for y in range(instance.n_labels):
            rows.append(
                [i + 1, instance.marginals[i], y + 1, instance.label_dist[i, y],
                 *instance.costs[i, y], lo, hi, step]
            )
    write_table(path, header, rows)


def read_instance(path):
    from .oracle import DiscreteInstance

    header, rows = read_table(path)
    col = {h: i for i, h in enumerate(header)}
    points = sorted({int(r[col["point"]]) for r in rows})
    labels = sorted({int(r[col["label"]]) for r in rows})
    n, c = len(points), len(labels)
    if points != list(range(1, n + 1)) or labels != list(range(1, c + 1)):
        raise InvalidInputError(f"{path}: points and labels must be numbered from 1 without gaps")
    cost_cols = _columns(header, "cost_")
    mu = np.zeros(n)
    q = np.zeros((n, c))
    costs = np.zeros((n, c, len(cost_cols)))
    for r in rows:
        i, y = int(r[col["point"]]) - 1, int(r[col["label"]]) - 1
        mu[i] = float(r[col["marginal"]])
        q[i, y] = float(r[col["label_prob"]])
        costs[i, y] = [float(r[j]) for j in cost_cols]
    grid = tuple(float(rows[0][col[k]]) for k in ("grid_lo", "grid_hi", "grid_step"))
    return DiscreteInstance(mu, q, costs, grid)
