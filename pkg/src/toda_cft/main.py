import argparse
import logging
import platform
import sys
import time
from fractions import Fraction
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd
import pydantic
import scipy
from pydantic import ValidationError

from toda_cft.core import chaos
from toda_cft.core.correlation_engine import (
    McBudget,
    covariance_test,
    estimate_correlation,
    prefactor,
    weyl_anomaly_test,
)
from toda_cft.core.errors import (
    CertificateViolation,
    InputError,
    NumericalError,
    SeibergRejection,
    TodaError,
)
from toda_cft.core.field_sampler import build_covariance
from toda_cft.core.lie_structure import (
    central_charge,
    central_charge_table,
    extended_seiberg_check,
    seiberg_check,
)
from toda_cft.core.sphere_geometry import SphereGrid
from toda_cft.core.summarizer import Summarizer
from toda_cft.core.verification import run_suite
from toda_cft.infrastructure.file_persistence import FilePersistence
from toda_cft.infrastructure.job_config import TASKS, JobConfig, load_job
from toda_cft.infrastructure.settings import Settings
from toda_cft.interface.user_interaction import UserInteraction

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_REJECTED = 2


def versions():
    try:
        own = metadata.version("toda-cft")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {
        "toda_cft": own,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


def _describe_validation(exc: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in error['loc']) or 'job'}: {error['msg']}"
        for error in exc.errors()
    )


def _error_category(exc: BaseException) -> tuple[str, str]:
    if isinstance(exc, ValidationError):
        return "invalid job", _describe_validation(exc)
    if isinstance(exc, CertificateViolation):
        return "certificate violation", str(exc)
    if isinstance(exc, NumericalError):
        return "numerical failure", str(exc)
    if isinstance(exc, InputError):
        return "invalid input", str(exc)
    if isinstance(exc, OSError):
        return "file error", str(exc)
    return "error", str(exc)


# ---------------------------------------------------------------------------
# Task handlers; each returns (payload, exit code)
# ---------------------------------------------------------------------------


def _algebra_info(job: JobConfig, settings: Settings, workers: int):
    data = job.algebra_data()
    summands = [
        {"label": s.label, "central_charge_coefficients": list(central_charge_table(s))}
        for s in data.spec.summands
    ]
    info = {
        "label": data.label,
        "rank": data.rank,
        "cartan": [list(row) for row in data.cartan],
        "cartan_inv": [list(row) for row in data.cartan_inv],
        "determinant": data.determinant,
        "weyl_norm_sq": data.weyl_norm_sq,
        "dual_coxeter": list(data.dual_coxeter),
        "central_charge_coefficients": [Fraction(data.rank), 6 * data.weyl_norm_sq],
        "summands": summands,
    }
    if job.gamma is not None:
        info["central_charge"] = central_charge(data, job.coupling())
    UserInteraction.print_algebra(info)
    return {"result": info}, EXIT_OK


def _seiberg(job: JobConfig, settings: Settings, workers: int):
    data = job.algebra_data()
    params = job.coupling()
    insertions = job.insertion_list(data)
    verdict = seiberg_check(insertions, data, params)
    extended = extended_seiberg_check(insertions, data, params)
    UserInteraction.print_verdict(verdict.to_dict())
    payload = {"result": {"extended": extended.to_dict()}, "seiberg": verdict.to_dict()}
    return payload, EXIT_OK if verdict.passed else EXIT_REJECTED


def _budget(job: JobConfig, settings: Settings, workers: int) -> McBudget:
    return McBudget(job.replicas, job.seed, workers, settings.chunk_size)


def _correlate(job: JobConfig, settings: Settings, workers: int):
    data = job.algebra_data()
    params = job.coupling()
    insertions = job.insertion_list(data)
    verdict = seiberg_check(insertions, data, params)
    if not verdict.passed:
        raise SeibergRejection(verdict)
    grid = SphereGrid.fibonacci(job.grid_n)
    model = build_covariance(grid, data, job.epsilon_value())
    budget = _budget(job, settings, workers)
    clearance = float(job.clearance)
    estimate = estimate_correlation(
        insertions, data, params, grid, budget, clearance=clearance, model=model
    )
    if job.traces:
        traces = chaos.gmc_traces(
            model, params.gamma, job.seed, job.replicas, insertions, clearance, workers, settings.chunk_size
        )
        FilePersistence.save_traces(traces, job.traces)
    UserInteraction.print_estimate("Correlation estimate", estimate.to_dict())
    result = {**estimate.to_dict(), "log_prefactor": prefactor(insertions, data, params)}
    return {"result": result, "seiberg": verdict.to_dict(), "metadata": estimate.metadata}, EXIT_OK


def _covariance_test(job: JobConfig, settings: Settings, workers: int):
    data = job.algebra_data()
    params = job.coupling()
    insertions = job.insertion_list(data)
    verdict = seiberg_check(insertions, data, params)
    grid = SphereGrid.fibonacci(job.grid_n)
    report = covariance_test(
        insertions,
        job.mobius(),
        data,
        params,
        grid,
        _budget(job, settings, workers),
        epsilon=job.epsilon_value(),
        clearance=float(job.clearance),
    )
    UserInteraction.print_comparison("Conformal covariance", report.z_score, report.passed)
    payload = {
        "result": {**report.to_dict(), "psi": job.mobius().to_string()},
        "seiberg": verdict.to_dict(),
        "metadata": report.left.metadata,
    }
    return payload, EXIT_OK


def _weyl_test(job: JobConfig, settings: Settings, workers: int):
    data = job.algebra_data()
    params = job.coupling()
    insertions = job.insertion_list(data)
    verdict = seiberg_check(insertions, data, params)
    phi = job.phi.factor()
    report = weyl_anomaly_test(
        insertions,
        phi,
        data,
        params,
        SphereGrid.fibonacci(job.grid_n),
        _budget(job, settings, workers),
        epsilon=job.epsilon_value(),
        clearance=float(job.clearance),
    )
    UserInteraction.print_comparison("Weyl anomaly", report.sigma_distance, report.passed)
    payload = {
        "result": {**report.to_dict(), "phi": phi.describe()},
        "seiberg": verdict.to_dict(),
        "metadata": report.metric_estimate.metadata,
    }
    return payload, EXIT_OK


def _gmc_stats(job: JobConfig, settings: Settings, workers: int):
    data = job.algebra_data()
    gamma = job.coupling().gamma
    insertions = job.insertion_list(data)
    model = build_covariance(SphereGrid.fibonacci(job.grid_n), data, job.epsilon_value())
    traces = chaos.gmc_traces(
        model,
        gamma,
        job.seed,
        job.replicas,
        insertions,
        float(job.clearance),
        workers,
        settings.chunk_size,
    )
    summary = Summarizer.summarize_by_direction(traces)
    UserInteraction.print_summary(summary)
    if job.traces:
        FilePersistence.save_traces(traces, job.traces)
    result = {"directions": summary.to_dict(orient="records")}
    if job.probe_scale is not None:
        probe = chaos.vertex_threshold_probe(
            float(job.probe_scale), model, job.replicas, job.seed, workers, settings.chunk_size
        )
        result["threshold_probe"] = probe.to_dict()
    return {"result": result, "metadata": model.metadata()}, EXIT_OK


def _verify(job: JobConfig, settings: Settings, workers: int):
    ledger = run_suite(job.seed)
    summary = Summarizer.summarize_ledger(ledger)
    UserInteraction.print_ledger(summary)
    all_passed = bool(summary["failed"].sum() == 0)
    result = {"ledger": ledger, "groups": summary.to_dict(orient="records"), "all_passed": all_passed}
    return {"result": result}, EXIT_OK if all_passed else EXIT_FAILURE


HANDLERS = {
    "algebra-info": _algebra_info,
    "seiberg": _seiberg,
    "correlate": _correlate,
    "covariance-test": _covariance_test,
    "weyl-test": _weyl_test,
    "gmc-stats": _gmc_stats,
    "verify": _verify,
}


def run(job: JobConfig, settings: Settings | None = None) -> int:
    """Execute one job, write its result JSON and return the exit code."""
    if settings is None:
        settings = Settings.from_env()
    workers = job.workers or settings.workers
    started = time.perf_counter()
    result = {
        "task": job.task,
        "config": job.model_dump(exclude={"workers"}),
        "versions": versions(),
        "result": None,
    }

    # 1. Run the task; a Seiberg rejection is an analytic outcome, not a failure
    try:
        payload, exit_code = HANDLERS[job.task](job, settings, workers)
        result.update(payload)
    except SeibergRejection as exc:
        logger.info(f"Task {job.task} rejected: {exc}")
        UserInteraction.print_verdict(exc.verdict.to_dict())
        result["seiberg"] = exc.verdict.to_dict()
        exit_code = EXIT_REJECTED
    except (TodaError, OSError, ValidationError) as exc:
        category, message = _error_category(exc)
        UserInteraction.print_error(category, message)
        result["error"] = {"category": category, "message": message}
        exit_code = EXIT_FAILURE

    # 2. Record the outcome; timing is excluded from determinism
    result["exit_code"] = exit_code
    result["timing"] = {"wall_seconds": time.perf_counter() - started, "workers": workers}

    # 3. Persist
    out = Path(job.out) if job.out else settings.output_dir / f"{job.task}.json"
    try:
        FilePersistence.save_result(result, out)
    except OSError as exc:
        UserInteraction.print_error("file error", str(exc))
        return EXIT_FAILURE
    logger.info(f"Task {job.task} finished with exit code {exit_code}")
    return exit_code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FAILURE, f"{self.prog}: invalid arguments: {message}\n")


def parse_args(argv=None):
    parser = _Parser(
        prog="toda-cft",
        description="Monte Carlo correlation functions of simply-laced Toda CFTs on the sphere.",
    )
    parser.add_argument("--config", required=True, help="path to a JSON job file")
    parser.add_argument("--seed", type=int, help="override the job seed (unsigned 64-bit)")
    parser.add_argument("--replicas", type=int, help="override the number of replicas")
    parser.add_argument("--workers", type=int, help="worker threads for replica blocks")
    parser.add_argument("--out", help="path of the result JSON")
    parser.add_argument("--traces", help="path of the per-replica CSV trace")
    parser.epilog = "tasks: " + ", ".join(TASKS)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        settings = Settings.from_env()
    except InputError as exc:
        UserInteraction.print_error("invalid environment", str(exc))
        return EXIT_FAILURE
    logging.basicConfig(
        level=settings.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        job = load_job(args.config).with_overrides(
            seed=args.seed,
            replicas=args.replicas,
            workers=args.workers,
            out=args.out,
            traces=args.traces,
        )
    except (TodaError, OSError, ValidationError) as exc:
        category, message = _error_category(exc)
        UserInteraction.print_error(category, message)
        return EXIT_FAILURE
    return run(job, settings)


if __name__ == "__main__":
    sys.exit(main())
