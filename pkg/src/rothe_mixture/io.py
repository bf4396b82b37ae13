"""CSV, snapshot and manifest files."""

import csv
import json
import math
import os

import numpy as np

from .discretization import State, norm2
from .stepper import Trajectory


class SnapshotError(OSError):
    pass


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows):
    """Header row, then one line per row; floats with 17 significant digits."""
    header = list(header)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            if isinstance(r, dict):
                r = [r.get(k, "") for k in header]
            r = list(r)
            if len(r) != len(header):
                raise ValueError("%s: row has %d cells, header has %d" % (path, len(r), len(header)))
            wr.writerow([_cell(v) for v in r])
    return path


def read_csv(path):
    """Strict reader: every row must have the header's column count."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError("%s: empty file" % path)
    header, body = rows[0], rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValueError("%s:%d: %d cells, expected %d" % (path, i, len(r), len(header)))
    return header, body


def _float_table(path):
    header, body = read_csv(path)
    try:
        data = np.array([[float(x) for x in r] for r in body], dtype=float)
    except ValueError as exc:
        raise ValueError("%s: %s" % (path, exc))
    return header, data.reshape(len(body), len(header))


# ---------------------------------------------------------------- snapshots

SNAP_DIR = "snapshots"


def write_snapshots(traj, out_dir, z, stride=1):
    """One CSV per kept slice plus an index; the last slice is always kept."""
    sd = os.path.join(out_dir, SNAP_DIR)
    os.makedirs(sd, exist_ok=True)
    if not traj.slices:
        write_csv(os.path.join(sd, "index.csv"), ["k", "t", "W", "file"], [])
        return []
    d = traj.slices[0].phi.shape[0]
    ns = traj.slices[0].w.shape[0]
    cols = ["z"] + ["phi_%d" % l for l in range(d)] + ["w_%d" % m for m in range(ns)] + ["v"]
    idx_rows = []
    last = len(traj.slices) - 1
    for i, s in enumerate(traj.slices):
        if i % stride and i != last:
            continue
        name = "slice_%06d.csv" % s.k
        body = np.column_stack([z, s.phi.T, s.w.T, s.v])
        write_csv(os.path.join(sd, name), cols, body.tolist())
        slope = s.w_dz1 if s.w_dz1 is not None else np.full(ns, math.nan)
        idx_rows.append([s.k, s.t, s.W] + list(slope) + [name])
    write_csv(os.path.join(sd, "index.csv"),
              ["k", "t", "W"] + ["w_dz1_%d" % m for m in range(ns)] + ["file"], idx_rows)
    return [r[-1] for r in idx_rows]


def read_snapshots(run_dir, d):
    """Slices listed in the index; missing or unreadable files raise SnapshotError."""
    sd = os.path.join(run_dir, SNAP_DIR)
    path = os.path.join(sd, "index.csv")
    if not os.path.exists(path):
        raise SnapshotError("no snapshot index in %s" % sd)
    try:
        header, body = read_csv(path)
    except ValueError as exc:
        raise SnapshotError(str(exc))
    ns = d - 1
    slices = []
    for r in body:
        k, t, W = int(r[0]), float(r[1]), float(r[2])
        slope = np.array([float(x) for x in r[3:3 + ns]])
        f = os.path.join(sd, r[-1])
        if not os.path.exists(f):
            raise SnapshotError("missing snapshot %s" % f)
        try:
            hdr, data = _float_table(f)
        except ValueError as exc:
            raise SnapshotError(str(exc))
        if data.shape[1] != 1 + d + ns + 1 or data.shape[0] < 3:
            raise SnapshotError("%s: unexpected shape %s" % (f, data.shape))
        phi = data[:, 1:1 + d].T.copy()
        w = data[:, 1 + d:1 + d + ns].T.copy()
        v = data[:, -1].copy()
        slices.append(State(k, t, phi, w, v, W, None if np.isnan(slope).any() else slope))
    return slices


def trajectory_from_snapshots(run_dir, manifest):
    """Rebuild a trajectory; budget sums are recomputed from the stored velocities."""
    d = int(manifest["config"]["model"]["d"])
    slices = read_snapshots(run_dir, d)
    if not slices:
        raise SnapshotError("snapshot index is empty")
    ks = [s.k for s in slices]
    if ks != list(range(ks[0], ks[0] + len(ks))):
        raise SnapshotError("snapshots are not consecutive (written with a stride?)")
    if len(slices) != manifest.get("n_slices", len(slices)):
        raise SnapshotError("manifest lists %s slices, found %d"
                            % (manifest.get("n_slices"), len(slices)))
    dt = float(manifest["dt"])
    h = 1.0 / (slices[0].v.shape[0] - 1)
    s2 = s1 = 0.0
    sl2, sh1 = [], []
    for s in slices:
        s2 += norm2(s.v, "L2", h) * dt
        s1 += norm2(s.v, "H1semi", h) * dt
        sl2.append(s2)
        sh1.append(s1)
    return Trajectory(slices, manifest["stop_reason"], slices[-1].t, sl2, sh1, dt,
                      float(manifest["t0"]))


# ---------------------------------------------------------------- manifests

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    return o


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
