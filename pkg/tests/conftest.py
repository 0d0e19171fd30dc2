import numpy as np
import pytest

from hardscat import bie, geometry, multiscatter


@pytest.fixture(scope="session")
def reference_scene():
    return geometry.circle_ellipse_scene(k=100.0, max_reflections=21)


@pytest.fixture(scope="session")
def circle_mie_k50():
    """Converged single-circle solve at k=50, N=512, reused across modules."""
    circle = geometry.Curve.circle((0.0, 0.0), 0.5)
    alpha = np.array([1.0, 0.0])
    grid = bie.BoundaryGrid.make(circle, 512)
    system = bie.assemble(grid, 50.0)
    rhs = bie.DensityField(grid, 2.0 * bie.incident_trace(grid, alpha, 50.0).values,
                           meta={"k": 50.0})
    eta = bie.solve(system, rhs)
    mie = bie.mie_total_field(0.5, 50.0, alpha, grid.params)
    return {"grid": grid, "system": system, "eta": eta, "mie": mie,
            "alpha": alpha, "k": 50.0}


@pytest.fixture(scope="session")
def circle_scaling():
    """Scaling report for the single circle, k in {100, 200, 400}."""
    circle = geometry.Curve.circle((0.0, 0.0), 0.5)
    ellipse = geometry.Curve.ellipse((0.4, -1.3), 0.25, 1.0,
                                     rotation=-np.pi / 3.0)
    scene = geometry.Scene(obstacles=(circle, ellipse),
                           alpha=np.array([1.0, 0.0]), k=100.0,
                           sequence=(0, 1, 0, 1))
    return multiscatter.scaling_report(scene, 0, [100.0, 200.0, 400.0])
