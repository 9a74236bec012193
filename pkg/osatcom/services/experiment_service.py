import hashlib
import json
import logging
import os
import tempfile
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd
from pydantic import TypeAdapter, ValidationError

from osatcom.core.config import VERSION
from osatcom.core.errors import ConfigParseError, InfeasibleProblemError, OsatcomError
from osatcom.models.schemas import (
    BeamformExperiment,
    BerSweepExperiment,
    ConvergenceExperiment,
    DispersionExperiment,
    ExperimentConfig,
    ExperimentKind,
    NetworkConfig,
    PulseConfig,
    PulseExperiment,
    PulseParameters,
    RunManifest,
    RunReport,
    RunStatus,
)
from osatcom.services.beamform_optimizer import solve_network
from osatcom.services.link_sim import (
    baseline_network_problems,
    ber_sweep,
    convergence_stats,
    draw_network,
    network_problems,
)
from osatcom.services.pulse_optimizer import check_pulse_feasible, dispersion_sweep, solve_pulse

logger = logging.getLogger(__name__)

_CONFIG_ADAPTER = TypeAdapter(ExperimentConfig)


def _format_validation_error(error: ValidationError) -> List[str]:
    problems = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        problems.append(f"{location}: {item['msg']}" if location else item["msg"])
    return problems


def _pulse_configs(parameters: PulseParameters) -> List[PulseConfig]:
    common = parameters.model_dump(exclude={"papr_th_db"})
    return [PulseConfig(papr_th_db=papr, **common) for papr in parameters.papr_th_db]


def config_hash(config) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ExperimentService:
    def __init__(self):
        self.runners = {
            ExperimentKind.PULSE: self._run_pulse,
            ExperimentKind.DISPERSION: self._run_dispersion,
            ExperimentKind.BEAMFORM: self._run_beamform,
            ExperimentKind.BER_SWEEP: self._run_ber_sweep,
            ExperimentKind.CONVERGENCE: self._run_convergence,
        }

    def load_config(self, path: str):
        """Read and strictly validate an experiment file."""
        text = Path(path).read_text(encoding="utf-8")
        try:
            return _CONFIG_ADAPTER.validate_json(text)
        except ValidationError as e:
            problems = _format_validation_error(e)
            raise ConfigParseError(f"{path}: {len(problems)} problem(s)", problems) from e

    def check_feasibility(self, config) -> List[str]:
        """Infeasibility that can be detected without running a solver."""
        problems = []
        if isinstance(config, (PulseExperiment, DispersionExperiment)):
            pulse = config.parameters if isinstance(config, PulseExperiment) else config.parameters.pulse
            for pulse_config in _pulse_configs(pulse):
                try:
                    check_pulse_feasible(pulse_config)
                except InfeasibleProblemError as e:
                    problems.append(f"parameters (papr_th_db={pulse_config.papr_th_db}): {e}")
        return problems

    def validate(self, path: str) -> RunReport:
        """Report every problem in a config file without running anything."""
        try:
            config = self.load_config(path)
        except ConfigParseError as e:
            return RunReport(status=RunStatus.INVALID, problems=e.problems, reason=str(e))
        problems = self.check_feasibility(config)
        if problems:
            return RunReport(status=RunStatus.INFEASIBLE, problems=problems, reason="infeasible experiment")
        return RunReport(status=RunStatus.OK)

    def apply_overrides(self, config, seed: Optional[int] = None, out: Optional[str] = None, trials: Optional[int] = None):
        update = {}
        if seed is not None:
            update["seed"] = seed
        if out is not None:
            update["output_path"] = out
        config = config.model_copy(update=update)
        if trials is not None and isinstance(config, (BeamformExperiment, BerSweepExperiment, ConvergenceExperiment)):
            network = config.parameters.network.model_copy(update={"trials": trials})
            config = config.model_copy(update={"parameters": config.parameters.model_copy(update={"network": network})})
        # round-trip so overrides are validated like file input
        return _CONFIG_ADAPTER.validate_python(config.model_dump())

    def run(self, config) -> RunReport:
        """Run one experiment and write its CSV plus manifest."""
        kind = ExperimentKind(config.experiment)
        logger.info(f"🚀 Running {kind.value} experiment (seed={config.seed})")
        started = time.perf_counter()
        try:
            feasibility = self.check_feasibility(config)
            if feasibility:
                return RunReport(status=RunStatus.INFEASIBLE, problems=feasibility, reason="infeasible experiment")

            csv_name, frame, summary = self.runners[kind](config)
            out_dir = Path(config.output_path)
            out_dir.mkdir(parents=True, exist_ok=True)
            csv_path = out_dir / csv_name
            self._write_csv(frame, csv_path)

            manifest = RunManifest(
                config_hash=config_hash(config),
                seed=config.seed,
                version=VERSION,
                experiment=kind,
                duration_s=time.perf_counter() - started,
                outputs=[csv_name],
                summary=summary,
            )
            manifest_path = out_dir / "manifest.json"
            self._write_atomic(manifest_path, manifest.model_dump_json(indent=2))
            logger.info(f"✅ {kind.value} finished in {manifest.duration_s:.2f}s -> {csv_path}")
            return RunReport(status=RunStatus.OK, outputs=[str(csv_path), str(manifest_path)])

        except InfeasibleProblemError as e:
            logger.error(f"❌ Infeasible experiment: {e}")
            return RunReport(status=RunStatus.INFEASIBLE, reason=str(e))
        except ValidationError as e:
            return RunReport(status=RunStatus.INVALID, problems=_format_validation_error(e), reason="invalid parameters")
        except (OsatcomError, OSError) as e:
            logger.error(f"❌ Experiment failed: {e}")
            return RunReport(status=RunStatus.ERROR, reason=str(e))

    # ------------------------------------------------------------------
    # Experiment runners: each returns (csv name, frame, summary)
    # ------------------------------------------------------------------

    def _run_pulse(self, config: PulseExperiment) -> Tuple[str, pd.DataFrame, Dict[str, float]]:
        rows = []
        for pulse_config in _pulse_configs(config.parameters):
            solution = solve_pulse(pulse_config)
            rows.append({
                "papr_th_db": pulse_config.papr_th_db,
                "t1": solution.t1,
                "kappa": solution.kappa,
                "overlap_prob": solution.overlap_prob,
                "binding": solution.binding_constraint.value,
            })
        frame = pd.DataFrame(rows, columns=["papr_th_db", "t1", "kappa", "overlap_prob", "binding"])
        return "pulse.csv", frame, {"min_overlap_prob": float(frame["overlap_prob"].min())}

    def _run_dispersion(self, config: DispersionExperiment) -> Tuple[str, pd.DataFrame, Dict[str, float]]:
        parameters = config.parameters
        base = _pulse_configs(parameters.pulse)[0]
        rows = dispersion_sweep(
            base,
            parameters.pulse.papr_th_db,
            parameters.lengths_km,
            parameters.base_coefficients,
            parameters.broadening_coefficient,
        )
        frame = pd.DataFrame(rows, columns=["length_km", "papr_th_db", "total_dispersion_ps"])
        return "dispersion.csv", frame, {"max_total_dispersion_ps": float(frame["total_dispersion_ps"].max())}

    def _network(self, config) -> NetworkConfig:
        # the experiment seed is the single seed of a run
        return config.parameters.network.model_copy(update={"seed": config.seed})

    def _run_beamform(self, config: BeamformExperiment) -> Tuple[str, pd.DataFrame, Dict[str, float]]:
        network = self._network(config)
        problems = network_problems(network, draw_network(network))
        solutions = solve_network(problems, config.parameters.solver)
        rows = []
        for cell, (problem, solution) in enumerate(zip(problems, solutions)):
            loads = [float((solution.q @ g).trace().real) for g in problem.g_list]
            rows.append({
                "cell": cell,
                "capacity_bits": solution.capacity,
                "tr_q": float(solution.q.trace().real),
                "max_interference": max(loads, default=0.0),
                "mu1_max": max(solution.mu1, default=0.0),
                "mu2": solution.mu2,
                "kkt_residual": solution.kkt_residual,
                "iterations": solution.iterations,
            })
        columns = ["cell", "capacity_bits", "tr_q", "max_interference", "mu1_max", "mu2", "kkt_residual", "iterations"]
        frame = pd.DataFrame(rows, columns=columns)
        return "beamform.csv", frame, {"mean_capacity_bits": float(frame["capacity_bits"].mean())}

    def _run_ber_sweep(self, config: BerSweepExperiment) -> Tuple[str, pd.DataFrame, Dict[str, float]]:
        parameters = config.parameters
        network = self._network(config)
        results = ber_sweep(network, parameters.solver, parameters.num_cells_sweep, parameters.xi_sweep)
        width = max(r.num_cells for r in results)
        columns = ["snr_db", "num_cells", "xi"] + [f"per_cell_ber_{i}" for i in range(width)] + ["network_error"]
        rows = []
        for result in results:
            row = {"snr_db": result.snr_db, "num_cells": result.num_cells, "xi": result.xi, "network_error": result.network_error}
            for i, ber in enumerate(result.per_cell_ber):
                row[f"per_cell_ber_{i}"] = ber
            rows.append(row)
        frame = pd.DataFrame(rows, columns=columns)
        return "ber.csv", frame, {"max_network_error": float(frame["network_error"].max())}

    def _run_convergence(self, config: ConvergenceExperiment) -> Tuple[str, pd.DataFrame, Dict[str, float]]:
        parameters = config.parameters
        network = self._network(config)
        channel_sets = draw_network(network)
        ensemble = {
            "robust_bound": network_problems(network, channel_sets),
            "reverse_triangle": baseline_network_problems(network, channel_sets),
        }
        rows = convergence_stats(
            ensemble,
            parameters.solver,
            parameters.runs,
            parameters.budgets,
            seed=config.seed,
            perturbation=parameters.perturbation,
        )
        frame = pd.DataFrame(rows, columns=["budget", "formulation", "std_dev"])
        final = frame[frame["budget"] == frame["budget"].max()]
        return "convergence.csv", frame, {f"final_std_{r.formulation}": float(r.std_dev) for r in final.itertuples()}

    # ------------------------------------------------------------------
    # Output
    # ------------------------------------------------------------------

    def _write_atomic(self, path: Path, text: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _write_csv(self, frame: pd.DataFrame, path: Path) -> None:
        self._write_atomic(path, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))


# Global instance
experiment_service = ExperimentService()
