import pytest

from airscape.synth import SynthSpec, generate_synthetic_world


@pytest.fixture(scope="session")
def small_world():
    """A compact deterministic world shared by read-only tests."""
    spec = SynthSpec(n_stations=10, hours=48, grid_rows=5, grid_cols=5,
                     road_grid=4, n_extra_roads=12, land_lattice=16)
    return generate_synthetic_world(42, spec)
