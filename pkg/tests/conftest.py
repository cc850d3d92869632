import numpy as np
import pytest

from facelf.lightfield import CameraRig
from facelf.synth import Pose, make_scene, render_lightfield

_ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per criterion; printed at the end of the run."""

    def record(n, ok, detail):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


@pytest.fixture(scope="session")
def rig64():
    return CameraRig.for_resolution((64, 64))


@pytest.fixture(scope="session")
def face64(rig64):
    """A rendered face-like scene at 64x64 with 15x15 views."""
    scene = make_scene(3, "face-like")
    lf, gt = render_lightfield(scene, rig64, Pose(), (64, 64), (15, 15))
    return scene, lf, gt


@pytest.fixture(scope="session")
def tilted64(rig64):
    scene = make_scene(0, "tilted-plane")
    lf, gt = render_lightfield(scene, rig64, Pose(), (64, 64), (15, 15))
    return scene, lf, gt


@pytest.fixture(scope="session")
def face_oracle(face64, rig64):
    from facelf.oracle import SlopeSearchSpec, estimate_depthmap

    _, lf, _ = face64
    return estimate_depthmap(lf, SlopeSearchSpec(), rig64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_lightfield(rng, U=5, V=3, X=8, Y=6, rig=None):
    from facelf.lightfield import LightField

    return LightField(rng.random((V, U, Y, X, 3)).astype(np.float32), rig)
