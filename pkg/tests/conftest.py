"""Shared fixtures: small meshes and exact model maps."""

import numpy as np
import pytest

from harmdisk import domain


def unit_square_mesh(n):
    """Uniform n x n quad grid on [0,1]^2, checkerboard diagonals,
    dirichlet boundary.  Test-only helper (the package builders are all
    curved domains)."""
    charts = [domain.Chart("square", "square-cartesian", {"frame": "z"})]
    bld = domain._Builder(charts)
    ids = np.array(
        [
            [bld.pool.add(0, complex(i / n, j / n)) for j in range(n + 1)]
            for i in range(n + 1)
        ]
    )
    z = lambda i, j: complex(i / n, j / n)
    for i in range(n):
        for j in range(n):
            bld.add_quad(
                0,
                (ids[i][j], ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]),
                (z(i, j), z(i + 1, j), z(i + 1, j + 1), z(i, j + 1)),
                parity=i + j,
            )
    mesh = bld.finish({"builder": "unit-square-test", "n": n})
    edge = np.concatenate([ids[0, :], ids[n, :], ids[:, 0], ids[:, n]])
    mesh.set_marker(np.unique(mesh.class_of[edge]), "dirichlet")
    return mesh


def geodesic_model(z):
    """u(x+iy) = tanh(x/2): the unit-speed x-axis geodesic traced at speed
    one in x, constant in y.  Exactly harmonic with H = L = 1/4."""
    return np.tanh(np.real(z) / 2.0) + 0.0j


@pytest.fixture(scope="session")
def square32():
    return unit_square_mesh(32)
