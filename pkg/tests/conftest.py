from __future__ import annotations

import os
import sys

import pytest

# run from the repository root: the package is imported as src.rig_ident
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from src.rig_ident.models import ESTIMABLE, RigParameters, SolverConfig  # noqa: E402


@pytest.fixture
def nominal() -> RigParameters:
    return RigParameters.nominal()


@pytest.fixture
def short_solver() -> SolverConfig:
    return SolverConfig(dt=1e-3, t_end=1.0)


@pytest.fixture
def perturbed(nominal) -> RigParameters:
    """Nominal set with every estimable parameter raised by 10 %."""
    return nominal.with_values(**{name: 1.1 * getattr(nominal, name) for name in ESTIMABLE})


@pytest.fixture
def unforced(nominal) -> RigParameters:
    return nominal.with_values(v=0.0, tf=0.0, t1=0.0)
