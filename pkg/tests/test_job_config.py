import json
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

import pytest
from pydantic import ValidationError

from toda_cft.core.errors import InputError
from toda_cft.infrastructure.job_config import load_job, parse_job

CORRELATE = {
    "task": "correlate",
    "algebra": "A1",
    "gamma": 0.8,
    "mu": [1.0],
    "insertions": [
        {"z": [1.0, 0.0], "alpha": {"basis": "root", "coords": [0.9]}},
        {"z": [-1.0, 0.0], "alpha": {"basis": "root", "coords": [0.9]}},
        {"z": [0.0, 0.5], "alpha": {"basis": "root", "coords": [1.6]}},
    ],
}


def _job(**changes):
    return parse_job(json.dumps({**CORRELATE, **changes}))


def test_defaults_and_exact_couplings():
    job = _job()
    assert job.grid_n == 1024
    assert job.replicas == 1000
    assert job.clearance == Decimal("0.02")
    params = job.coupling()
    assert params.gamma == Fraction(4, 5)
    assert params.mu == (Fraction(1),)


def test_insertions_resolve_to_cartan_vectors():
    job = _job()
    data = job.algebra_data()
    insertions = job.insertion_list(data)
    assert [z for z, _ in insertions] == [1 + 0j, -1 + 0j, 0.5j]
    assert insertions[2][1].root_coords == (Fraction(8, 5),)


def test_weight_basis():
    job = _job(insertions=[{"z": [0, 0], "alpha": {"basis": "weight", "coords": [1]}}], task="seiberg")
    alpha = job.insertion_list(job.algebra_data())[0][1]
    assert alpha.root_coords == (Fraction(1, 2),)


@pytest.mark.parametrize(
    "changes",
    [
        {"gamma": None},
        {"mu": []},
        {"insertions": []},
        {"grid_n": 100},
        {"grid_n": 10000},
        {"replicas": 1},
        {"seed": -1},
        {"seed": 2**64},
        {"algebra": "B2"},
        {"gamma": 1.5},
        {"mu": [1.0, 1.0]},
        {"mu": [-1.0]},
        {"psi": "1,2"},
        {"task": "integrate"},
        {"colour": "blue"},
        {"clearance": 0},
    ],
)
def test_invalid_jobs(changes):
    with pytest.raises(ValidationError):
        _job(**changes)


def test_insertion_length_must_match_rank():
    with pytest.raises(ValidationError):
        _job(algebra="A2", mu=[1.0, 1.0])


def test_task_specific_requirements():
    with pytest.raises(ValidationError):
        _job(task="covariance-test")
    with pytest.raises(ValidationError):
        _job(task="weyl-test")
    assert _job(task="covariance-test", psi="0,1,1,0").mobius().to_string()
    assert _job(task="weyl-test", phi={"family": "bump", "amplitude": 0.1}).phi.factor().amplitude == 0.1


def test_algebra_info_needs_nothing_else():
    job = parse_job('{"task": "algebra-info", "algebra": "e8"}')
    assert job.algebra == "E8"
    assert job.gamma is None


def test_overrides():
    job = _job()
    assert job.with_overrides() is job
    changed = job.with_overrides(seed=5, replicas=None)
    assert changed.seed == 5
    assert changed.replicas == job.replicas


@pytest.mark.parametrize("text", ["{", "[1, 2]", "{'task': 'verify'}"])
def test_malformed_json(text):
    with pytest.raises(InputError):
        parse_job(text)


def test_load_job_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="File not found"):
        load_job(tmp_path / "missing.json")


def test_load_job(tmp_path):
    path = tmp_path / "job.json"
    path.write_text(json.dumps(CORRELATE), encoding="utf-8")
    assert load_job(path).task == "correlate"


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "resources" / "jobs").glob("*.json")), ids=lambda p: p.stem)
def test_shipped_jobs_are_valid(path):
    job = load_job(path)
    assert path.stem.startswith(job.task)
