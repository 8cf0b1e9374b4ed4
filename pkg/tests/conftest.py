import pathlib

import pytest

from timetide.desugar import to_kernel
from timetide.surface import parse_text

ROOT = pathlib.Path(__file__).resolve().parents[1]
PROGRAMS = ROOT / "programs"


def program_source(name: str) -> tuple[str, str]:
    path = PROGRAMS / f"{name}.tt"
    return path.read_text(), str(path)


def topo_files(name: str) -> tuple[str, str]:
    topo = (PROGRAMS / "topo" / f"{name}.topo.json").read_text()
    mapping = (PROGRAMS / "topo" / f"{name}.map.json").read_text()
    return topo, mapping


def observer_path(name: str) -> pathlib.Path:
    return PROGRAMS / "observers" / f"{name}.tt"


@pytest.fixture(scope="session")
def trading_kernel():
    src, fn = program_source("trading")
    return to_kernel(parse_text(src, fn))


@pytest.fixture(scope="session")
def cruise_kernel():
    src, fn = program_source("cruise")
    return to_kernel(parse_text(src, fn))


@pytest.fixture(scope="session")
def sensor_kernel():
    src, fn = program_source("sensor")
    return to_kernel(parse_text(src, fn))
