"""Trace files and the corpus manifest.

A trace file is an ``.npz`` holding a JSON ``header`` string and the ``values``
block (T x 5, float64). The manifest is a JSON document listing every run.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from windfault.errors import InvalidArgument
from windfault.turbsim.params import FaultKind, FaultScenario, SensorTrace, TurbineParams
from windfault.turbsim.simulate import run_simulation
from windfault.turbsim.wind import generate_wind

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def save_trace(trace: SensorTrace, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, header=np.array(json.dumps(trace.header())),
                            values=trace.values)
    return path


def load_trace(path) -> SensorTrace:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        values = data["values"]
    return SensorTrace(run_id=header["run_id"], label=header["label"], values=values,
                       wind_seed=header["wind_seed"], sample_rate=header["sample_rate"],
                       scenario=header.get("scenario", {}), wind=header.get("wind", {}))


def run_seed(seed: int, kind: int, index: int) -> int:
    """Per-run wind seed derived from (corpus seed, class, run index)."""
    return int(np.random.SeedSequence([int(seed), int(kind), int(index)]).generate_state(1)[0])


def _reusable(path: Path, run_id, wseed, n_samples, scenario, wind) -> bool:
    if not path.exists():
        return False
    try:
        trace = load_trace(path)
    except (OSError, ValueError, KeyError):
        return False
    return (trace.run_id == run_id and trace.wind_seed == wseed
            and len(trace.values) == n_samples and trace.scenario == scenario.to_dict()
            and trace.wind == wind)


def simulate_corpus(out_dir, runs_per_class: dict, duration_s: float, seed: int,
                    mean_speed: float = 18.2, turbulence_intensity: float = 0.10,
                    params: TurbineParams | None = None, extra: dict | None = None,
                    first_index: dict | None = None) -> dict:
    """Simulate every requested run, write trace files and the manifest.

    ``runs_per_class`` maps a fault kind (anything ``FaultKind.parse`` accepts)
    to a run count; ``first_index`` optionally maps a kind to the index its
    first new run gets. Existing trace files whose header matches (run id,
    wind seed, length, scenario) are reused, others are overwritten.
    """
    params = params or TurbineParams()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    starts = {FaultKind.parse(k): int(v) for k, v in (first_index or {}).items()}
    n_samples = int(round(duration_s * params.sample_rate))
    wind_info = {"mean_speed": float(mean_speed),
                 "turbulence_intensity": float(turbulence_intensity)}
    runs = []
    for key, count in runs_per_class.items():
        kind = FaultKind.parse(key)
        scenario = FaultScenario.nominal(kind)
        start = starts.get(kind, 0)
        for i in range(start, start + int(count)):
            wseed = run_seed(seed, kind, i)
            run_id = f"{kind.name}-{i:03d}"
            fname = f"{run_id}.npz"
            path = out_dir / fname
            if not _reusable(path, run_id, wseed, n_samples, scenario, wind_info):
                wind = generate_wind(wseed, duration_s, params.internal_dt, mean_speed,
                                     turbulence_intensity)
                trace = run_simulation(params, scenario, wind, duration_s, run_id=run_id)
                save_trace(trace, path)
                log.info("simulated %s", run_id)
            runs.append({"run_id": run_id, "label": int(kind), "kind": kind.name,
                         "wind_seed": wseed, "file": fname, "duration": duration_s})
    manifest = {
        "sample_rate": params.sample_rate,
        "duration": duration_s,
        "mean_speed": mean_speed,
        "turbulence_intensity": turbulence_intensity,
        "seed": seed,
        "params": params.to_dict(),
        "runs": runs,
    }
    if extra:
        manifest.update(extra)
    write_manifest(out_dir / MANIFEST_NAME, manifest)
    return manifest


def write_manifest(path, manifest: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    manifest = json.loads(path.read_text())
    manifest["_root"] = str(path.parent)
    if not manifest.get("runs"):
        raise InvalidArgument(f"manifest {path} lists no runs")
    return manifest
