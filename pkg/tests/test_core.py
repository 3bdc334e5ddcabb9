import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lendrate.core import (
    ConfigurationError,
    DomainError,
    RateSurface,
    RiskParams,
    ShapeError,
    TimeGrid,
    UtilizationGrid,
    ValueSurface,
    build_grids,
    lattice_size,
    terminal_penalty,
    terminal_penalty_slope,
)


def test_terminal_penalty_values():
    p = RiskParams()
    assert terminal_penalty(0.5, p) == 0.0
    assert terminal_penalty(0.95, p) == pytest.approx(3.75)
    assert terminal_penalty(1.0, p) == pytest.approx(15.0)


def test_terminal_penalty_domain():
    with pytest.raises(DomainError):
        terminal_penalty(1.2, RiskParams())
    with pytest.raises(DomainError):
        terminal_penalty(-0.1, RiskParams())


@given(st.floats(0, 1), st.floats(0, 1))
def test_terminal_penalty_monotone_convex(a, b):
    p = RiskParams()
    lo, hi = min(a, b), max(a, b)
    assert terminal_penalty(lo, p) <= terminal_penalty(hi, p)
    mid = 0.5 * (lo + hi)
    assert terminal_penalty(mid, p) <= 0.5 * (terminal_penalty(lo, p) + terminal_penalty(hi, p)) + 1e-12


def test_penalty_slope_vanishes_at_target():
    p = RiskParams()
    assert terminal_penalty_slope(p.u_star, p) == 0.0
    assert terminal_penalty_slope(p.u_star - 0.01, p) == 0.0


def test_grid_sizes():
    assert len(UtilizationGrid(0.01)) == 101
    assert len(UtilizationGrid(0.001)) == 1001
    _, times = build_grids(RiskParams(horizon_T=100), 100)
    assert times.tau == 1.0
    assert times.times[-1] == 100.0


def test_grid_nodes_exact():
    g = UtilizationGrid(0.001)
    k = np.arange(len(g))
    assert np.max(np.abs(g.nodes - k * 0.001)) <= 1e-12
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0


@pytest.mark.parametrize("delta", [0.03, 0.3, 0.0, 1.0, -0.1])
def test_bad_delta(delta):
    with pytest.raises(ConfigurationError):
        lattice_size(delta)
    with pytest.raises(ConfigurationError):
        RiskParams(delta=delta)


@pytest.mark.parametrize("kw", [dict(phi=0), dict(eta=-1), dict(r_bar=-0.1), dict(u_star=1.5),
                                dict(horizon_T=0), dict(r_min=0.3, r_max=0.2)])
def test_bad_params(kw):
    with pytest.raises(ConfigurationError):
        RiskParams(**kw)


def test_index_of():
    g = UtilizationGrid(0.01)
    assert g.index_of(0.37) == 37
    with pytest.raises(DomainError):
        g.index_of(0.375)


def test_surface_shapes():
    g, t = UtilizationGrid(0.1), TimeGrid(5, 10.0)
    RateSurface(g, t, np.zeros((11, 5)))
    RateSurface(g, t, np.zeros((11, 6)))
    with pytest.raises(ShapeError):
        RateSurface(g, t, np.zeros((10, 5)))
    with pytest.raises(ShapeError):
        ValueSurface(g, t, np.zeros((11, 5)))
    with pytest.raises(DomainError):
        RateSurface(g, t, np.full((11, 5), np.nan))


def test_surface_immutable():
    s = RateSurface(UtilizationGrid(0.5), TimeGrid(1, 1.0), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        s.values[0, 0] = 1.0
