"""File formats: JSON-Lines for frames, sub-trajectories, match results and
truth tracks; YAML for the spatial/temporal model state."""

from __future__ import annotations

import json

import numpy as np
import yaml

from .geometry import Frame
from .matching import MatchResult
from .spatiotemporal import PairTimeState, TransitionMatrix, TravelTimeModel
from .tracker import SubTrajectory


def write_frames(path, frames) -> None:
    with open(path, "w") as fh:
        for f in frames:
            rec = {"sensor_id": f.sensor_id, "t": f.t, "points": np.round(f.points, 6).tolist()}
            fh.write(json.dumps(rec) + "\n")


def read_frames(path) -> list[Frame]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            pts = np.asarray(rec["points"], dtype=np.float64).reshape(-1, 3)
            out.append(Frame(sensor_id=rec["sensor_id"], t=float(rec["t"]), points=pts))
    return out


def write_truth(path, positions) -> None:
    """positions: person_id -> (T, 3) array of (t, x, y)."""
    with open(path, "w") as fh:
        for pid in sorted(positions):
            rec = {"person_id": int(pid), "samples": np.round(positions[pid], 6).tolist()}
            fh.write(json.dumps(rec) + "\n")


def read_truth(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[int(rec["person_id"])] = np.asarray(rec["samples"], dtype=np.float64)
    return out


def write_subtrajectories(path, trs, descriptors: dict | None = None) -> None:
    """Sub-trajectory records; point clouds are not serialized, so an optional
    per-id descriptor (height scalar or embedding vector) rides along to keep
    downstream matching self-contained."""
    with open(path, "w") as fh:
        for tr in sorted(trs, key=lambda tr: tr.id):
            rec = {
                "id": tr.id,
                "sensor_id": tr.sensor_id,
                "t_start": tr.t_start,
                "t_end": tr.t_end,
                "start_gate": tr.start_gate,
                "end_gate": tr.end_gate,
                "samples": np.round(tr.samples, 6).tolist(),
            }
            if descriptors and tr.id in descriptors:
                d = descriptors[tr.id]
                rec["descriptor"] = float(d) if np.ndim(d) == 0 else np.asarray(d).tolist()
            fh.write(json.dumps(rec) + "\n")


def read_subtrajectories(path) -> tuple[list[SubTrajectory], dict]:
    trs, descriptors = [], {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            tr = SubTrajectory(
                id=rec["id"],
                sensor_id=rec["sensor_id"],
                samples=np.asarray(rec["samples"], dtype=np.float64),
                start_gate=rec.get("start_gate", "UNKNOWN"),
                end_gate=rec.get("end_gate", "UNKNOWN"),
            )
            trs.append(tr)
            if "descriptor" in rec:
                d = rec["descriptor"]
                descriptors[tr.id] = float(d) if np.isscalar(d) else np.asarray(d, dtype=np.float64)
    return trs, descriptors


def write_match_results(path, results) -> None:
    with open(path, "w") as fh:
        for k, res in enumerate(results):
            rec = {
                "window_id": k,
                "pairs": [[u, v, round(w, 9)] for u, v, w in res.pairs],
                "terminals": list(res.terminals),
            }
            fh.write(json.dumps(rec) + "\n")


def read_match_results(path) -> list[MatchResult]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            pairs = tuple((u, v, float(w)) for u, v, w in rec["pairs"])
            out.append(MatchResult(pairs=pairs, terminals=tuple(rec["terminals"]), sequences=()))
    return out


def save_state(path, q: TransitionMatrix, tt: TravelTimeModel) -> None:
    """Transition counts and travel-time state, structured for warm restarts."""
    doc = {
        "gates": list(q.gates),
        "q_counts": q.counts.tolist(),
        "travel_time": {
            "dt_max": tt.dt_max,
            "n_min": tt.n_min,
            "prior_a": tt.prior_a,
            "prior_b": tt.prior_b,
            "pairs": [
                {
                    "from": g1,
                    "to": g2,
                    "mode": "uniform" if st.is_uniform else "invgamma",
                    # updates leave numpy scalars behind; yaml wants plain ones
                    "n": int(st.n),
                    "mean": float(st.mean),
                    "var_a": float(st.var_a),
                    "var_b": float(st.var_b),
                    "shape": None if st.shape is None else float(st.shape),
                    "scale": None if st.scale is None else float(st.scale),
                    "location": float(st.location),
                }
                for (g1, g2), st in sorted(tt.pairs.items())
            ],
        },
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_state(path) -> tuple[TransitionMatrix, TravelTimeModel]:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    q = TransitionMatrix(gates=tuple(doc["gates"]), counts=np.asarray(doc["q_counts"], dtype=np.float64))
    tdoc = doc["travel_time"]
    pairs = {}
    for p in tdoc.get("pairs", []):
        pairs[(p["from"], p["to"])] = PairTimeState(
            n=int(p["n"]),
            mean=float(p["mean"]),
            var_a=float(p["var_a"]),
            var_b=float(p["var_b"]),
            shape=None if p.get("shape") is None else float(p["shape"]),
            scale=None if p.get("scale") is None else float(p["scale"]),
            location=float(p.get("location", 0.0)),
        )
    tt = TravelTimeModel(
        dt_max=float(tdoc["dt_max"]),
        n_min=int(tdoc["n_min"]),
        prior_a=float(tdoc["prior_a"]),
        prior_b=float(tdoc["prior_b"]),
        pairs=pairs,
    )
    return q, tt


def write_columns(path, header, rows) -> None:
    """Column-oriented plot data: '# h1 h2 ...' then whitespace-separated rows."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in rows:
            fh.write(" ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row) + "\n")
