import numpy as np
import pytest

from bgsim.skeleton import EdgeSpec, Joint, SkeletonModel, default_model


@pytest.fixture(scope="session")
def model15():
    return default_model()


def simple_edge(i, j, kind="kinetic", offset=(0.0, 1.0), quad=-0.5, num_types=1, **kw):
    """Edge with a single shared offset and isotropic quadratic weights."""
    t = num_types
    off = np.zeros((2, t, 2))
    off[0] = offset
    off[1] = -np.asarray(offset, dtype=float)
    deform = np.zeros((2, t, 4))
    deform[..., 1] = deform[..., 3] = quad
    params = dict(type_weights=[0.0, 0.0], type_prior=np.full((2, t), 1.0 / t),
                  occlusion_bias=np.zeros((t, t, 3, 3)))
    params.update(kw)
    return EdgeSpec(i, j, kind, t, off, deform, **params)


def chain_model(n, contextual=(), offset=(0.0, 1.0), quad=-0.5, bias=(0.0, 0.0, -0.5)):
    joints = [Joint(k, f"j{k}", 1) for k in range(n)]
    edges = [simple_edge(k, k + 1, offset=offset, quad=quad) for k in range(n - 1)]
    edges += [simple_edge(a, b, "contextual", offset=offset, quad=quad) for a, b in contextual]
    return SkeletonModel(joints, edges, np.ones(n), np.tile(bias, (n, 1)), np.full(n, 0.1))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
