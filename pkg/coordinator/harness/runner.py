# Monte-Carlo experiment driver: drops in parallel, rows out to CSV or JSON
import asyncio
import copy
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from coordinator.core.coordinator import Coordinator
from shared import __version__
from shared.config import presets_path, with_overrides, worker_count
from shared.errors import ConfigurationError, ResultsWriteError
from shared.models import (
    ExperimentKind,
    ExperimentSpec,
    RateReport,
    ResultRow,
    Scheme,
    SimResult,
    SystemConfig,
    WsmseIteration,
)

logger = logging.getLogger(__name__)

CSV_HEADER = ["scheme", "sweep", "drop", "iter", "sum_rate", "flops", "wall_ms"]

DEFAULT_PRESETS: Dict[str, Dict[str, Any]] = {
    "convergence": {
        "kind": "convergence",
        "schemes": ["proposed"],
        "nse_orders": [1, 3, 5, 7],
        "drops": 100,
    },
    "power": {
        "kind": "power_sweep",
        "sweep_field": "p_max_w",
        "sweep_values": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
        "schemes": ["proposed", "iabs_only", "proposed_bs_zf"],
        "drops": 100,
    },
    "antenna": {
        "kind": "antenna_sweep",
        "sweep_field": "num_antennas",
        "sweep_values": [16, 32, 64],
        "schemes": ["proposed", "iabs_only", "proposed_bs_zf"],
        "drops": 100,
    },
}


def drop_seed(seed: int, drop: int) -> int:
    """Per-drop seed; independent of the order drops are run in."""
    return seed ^ drop


def load_presets() -> Dict[str, Dict[str, Any]]:
    """
    Experiment presets from the presets JSON, or built-in defaults.

    Falls back to the defaults when the file is missing or cannot be parsed.
    """
    path = presets_path()
    try:
        if path.exists():
            with open(path, "r", encoding="utf-8") as f:
                presets = json.load(f)
            logger.info(f"Loaded experiment presets from {path}")
            return presets.get("experiments", presets)
    except Exception as e:
        logger.warning(f"Could not load experiment presets: {e}")
    return copy.deepcopy(DEFAULT_PRESETS)


def build_spec(
    name: str,
    base: SystemConfig,
    drops: Optional[int] = None,
    seed: Optional[int] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentSpec:
    """Experiment spec for a named preset, optionally with drops/seed/field overrides."""
    presets = load_presets()
    if name not in presets:
        raise ConfigurationError(f"Unknown experiment {name!r}; known: {sorted(presets)}")
    data = dict(presets[name])
    data.update(overrides or {})
    data["base"] = base
    if drops is not None:
        data["drops"] = drops
    data["seed"] = base.rng_seed if seed is None else seed
    try:
        return ExperimentSpec.model_validate(data)
    except ValueError as e:
        raise ConfigurationError(f"Invalid experiment {name!r}: {e}") from e


# ---------------------------------------------------------------------------
# Single drop
# ---------------------------------------------------------------------------


def run_drop(
    cfg: SystemConfig,
    scheme: Scheme,
    rng: np.random.Generator,
    precode_mode: Optional[Union[int, str]] = None,
) -> Tuple[RateReport, List[WsmseIteration]]:
    """
    One drop end to end: topology, clusters, channels, beams, precoder, rates.

    ``precode_mode`` overrides the Neumann order of ``cfg`` ("exact" or an integer).

    Raises:
        ConfigurationError: the scenario cannot be realised
    """
    if precode_mode is not None:
        cfg = with_overrides(cfg, nse_order=precode_mode)
    coordinator = Coordinator(cfg)
    coordinator.prepare_drop(rng)
    outcome = coordinator.run_scheme(scheme)
    return outcome.report, outcome.trace


def _sweep_points(spec: ExperimentSpec) -> List[Tuple[Optional[float], SystemConfig]]:
    """(sweep value, config) pairs; the convergence kind sweeps the Neumann order instead."""
    if spec.kind == ExperimentKind.CONVERGENCE:
        orders: List[Union[int, str]] = list(spec.nse_orders) + ["exact"]
        return [
            (math.inf if t == "exact" else float(t), with_overrides(spec.base, nse_order=t))
            for t in orders
        ]
    if spec.sweep_field is None:
        return [(None, spec.base)]
    return [
        (float(value), with_overrides(spec.base, **{spec.sweep_field: value}))
        for value in spec.sweep_values
    ]


def drop_rows(spec: ExperimentSpec, drop: int) -> List[ResultRow]:
    """All rows of one drop: every sweep point and scheme on the same random realisation."""
    rows = []
    for sweep, cfg in _sweep_points(spec):
        coordinator = Coordinator(cfg)
        coordinator.prepare_drop(np.random.default_rng(drop_seed(spec.seed, drop)))
        for scheme in spec.schemes:
            outcome = coordinator.run_scheme(scheme)
            if spec.kind == ExperimentKind.CONVERGENCE and outcome.state is not None:
                for it, rate in enumerate(outcome.state.sum_rate_history):
                    rows.append(
                        ResultRow(
                            scheme=scheme.value,
                            sweep=sweep,
                            drop=drop,
                            iter=it,
                            sum_rate=max(rate, 0.0),
                            flops=outcome.flops,
                            wall_ms=outcome.wall_ms,
                        )
                    )
                continue
            rows.append(
                ResultRow(
                    scheme=scheme.value,
                    sweep=sweep,
                    drop=drop,
                    sum_rate=outcome.report.sum_rate,
                    per_ue_rates=outcome.report.rate_bps_hz,
                    flops=outcome.flops,
                    wall_ms=outcome.wall_ms,
                )
            )
    return rows


def _row_key(spec: ExperimentSpec, row: ResultRow):
    scheme_order = [s.value for s in spec.schemes]
    sweep = -math.inf if row.sweep is None else row.sweep
    it = -1 if row.iter is None else row.iter
    return (sweep, scheme_order.index(row.scheme), row.drop, it)


def _metadata(spec: ExperimentSpec) -> Dict[str, Any]:
    return {
        "kind": spec.kind.value,
        "seed": spec.seed,
        "drops": spec.drops,
        "sweep_field": spec.sweep_field,
        "sweep_values": spec.sweep_values,
        "schemes": [s.value for s in spec.schemes],
        "nse_orders": spec.nse_orders,
        "config": spec.base.model_dump(mode="json"),
        "code_version": __version__,
    }


async def run_experiment_async(
    spec: ExperimentSpec, workers: Optional[int] = None
) -> SimResult:
    """
    Run every drop of ``spec`` concurrently, at most ``workers`` at a time.

    Each drop runs in a worker thread with its own seed, so the row set does not
    depend on scheduling. Rows are returned in a fixed order.

    Raises:
        Exception: the first failure among the drops, after all of them finished
    """
    workers = workers or worker_count()
    semaphore = asyncio.Semaphore(workers)

    async def run_one(drop: int) -> List[ResultRow]:
        async with semaphore:
            logger.debug(f"Starting drop {drop}")
            return await asyncio.to_thread(drop_rows, spec, drop)

    logger.info(
        f"🚀 Running {spec.kind.value} experiment: {spec.drops} drops, "
        f"{len(spec.schemes)} schemes, {workers} workers"
    )
    results = await asyncio.gather(*(run_one(d) for d in range(spec.drops)), return_exceptions=True)

    failures = [r for r in results if isinstance(r, BaseException)]
    if failures:
        logger.error(f"{len(failures)} of {spec.drops} drops failed; first error: {failures[0]}")
        raise failures[0]

    rows = [row for drop_result in results for row in drop_result]
    rows.sort(key=lambda row: _row_key(spec, row))
    logger.info(f"🏁 Experiment complete: {len(rows)} rows")
    return SimResult(rows=rows, metadata=_metadata(spec))


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> SimResult:
    """Blocking wrapper around run_experiment_async."""
    return asyncio.run(run_experiment_async(spec, workers))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def write_results(result: SimResult, path: Union[str, Path], fmt: str = "csv") -> Path:
    """
    Write result rows as CSV or JSON (UTF-8, LF line endings, round-trip float precision).

    CSV columns are fixed; ``iter`` and ``sweep`` stay empty when not applicable.
    JSON carries every row field plus the metadata block.

    Raises:
        ResultsWriteError: the file could not be written
    """
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown results format {fmt!r}")
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(CSV_HEADER)
                for row in result.rows:
                    data = row.model_dump()
                    writer.writerow([_csv_cell(data[col]) for col in CSV_HEADER])
        else:
            payload = {
                "metadata": result.metadata,
                "rows": [row.model_dump() for row in result.rows],
            }
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                json.dump(payload, f, indent=2)
                f.write("\n")
    except OSError as e:
        raise ResultsWriteError(str(path), str(e)) from e

    logger.info(f"Wrote {len(result.rows)} rows to {path}")
    return path


def read_results_csv(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Parse a results CSV back into typed dicts (empty cells become None)."""
    parsed = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for record in csv.DictReader(f):
            parsed.append(
                {
                    "scheme": record["scheme"],
                    "sweep": float(record["sweep"]) if record["sweep"] else None,
                    "drop": int(record["drop"]),
                    "iter": int(record["iter"]) if record["iter"] else None,
                    "sum_rate": float(record["sum_rate"]),
                    "flops": int(record["flops"]),
                    "wall_ms": float(record["wall_ms"]),
                }
            )
    return parsed
