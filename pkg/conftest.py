import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from derham.mesh import cycle_mesh, load_mesh, triangulated_square_mesh, unit_interval_mesh  # noqa: E402
from derham.whitney import whitney_complex  # noqa: E402
from hilbert.complex import load_complex  # noqa: E402

FIXTURES = ROOT / "fixtures"
CONFIGS = ROOT / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def configs_dir() -> Path:
    return CONFIGS


@pytest.fixture
def interval4():
    return load_complex(str(FIXTURES / "interval4.json"))


@pytest.fixture
def cycle4():
    return load_complex(str(FIXTURES / "cycle4.json"))


@pytest.fixture
def square2_mesh():
    return load_mesh(str(FIXTURES / "square2_mesh.json"))


@pytest.fixture(params=["interval", "cycle", "square"])
def whitney_family(request):
    """三个网格族的小 Whitney 复形"""
    meshes = {
        "interval": lambda: unit_interval_mesh(8),
        "cycle": lambda: cycle_mesh(6),
        "square": lambda: triangulated_square_mesh(3),
    }
    return request.param, whitney_complex(meshes[request.param]())
