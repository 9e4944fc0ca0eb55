import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from scalepool.convnet import build_network, homogeneous_network, mean_channel
from scalepool.errors import ParameterError
from scalepool.spectra import (
    LaplacianModes,
    filter_gamma,
    filter_spectrum,
    grid_laplacian_modes,
    spectrum_evolution,
)


def test_path_eigenvalues_F3():
    m = grid_laplacian_modes(3, 1)
    np.testing.assert_allclose(m.eigenvalues, [0, 1, 3], atol=1e-12)


@pytest.mark.parametrize("F,dim", [(2, 1), (3, 1), (5, 1), (2, 2), (3, 2), (4, 2)])
def test_orthonormal_with_constant_mode(F, dim):
    m = grid_laplacian_modes(F, dim)
    n = F**dim
    assert len(m.eigenvalues) == n
    np.testing.assert_allclose(m.vectors @ m.vectors.T, np.eye(n), atol=1e-10)
    np.testing.assert_allclose(m.vectors[0], np.full(n, 1 / np.sqrt(n)), atol=1e-12)
    assert m.eigenvalues[0] == 0.0
    assert np.all(np.diff(m.eigenvalues) >= -1e-12)


def test_3x3_grid_has_nine_modes_in_six_eigenspaces():
    m = grid_laplacian_modes(3, 2)
    assert m.vectors.shape == (9, 9)
    # eigenvalues are sums of {0, 1, 3}: 0, 1(x2), 2, 3(x2), 4(x2), 6
    np.testing.assert_allclose(m.group_eigenvalues, [0, 1, 2, 3, 4, 6], atol=1e-12)
    assert [len(g) for g in m.groups] == [1, 2, 1, 2, 2, 1]


def test_homogeneous_filter_projects_on_constant_mode():
    m = grid_laplacian_modes(3)
    g = filter_spectrum(homogeneous_network(2, 3, 1, 16), 1, m)
    assert g[0] == pytest.approx(1 / 3)
    np.testing.assert_allclose(g[1:], 0, atol=1e-15)


def test_eigenvector_filter_concentrates():
    m = grid_laplacian_modes(4)
    for l in range(4):
        w = m.vectors[l].reshape(1, 1, 4)
        g = filter_gamma(w, m)
        assert g[l] == pytest.approx(1.0)
        assert np.delete(g, l).max() < 1e-20


@settings(max_examples=30, deadline=None)
@given(w=arrays(np.float64, (3, 2, 3, 3), elements=st.floats(-5, 5)))
def test_parseval(w):
    m = grid_laplacian_modes(3, 2)
    g = filter_gamma(w, m)
    target = np.mean(np.sum(w.reshape(6, 9) ** 2, axis=1))
    assert np.all(g >= 0)
    assert g.sum() == pytest.approx(target, rel=1e-9, abs=1e-12)


def test_basis_independence_within_eigenspace():
    m = grid_laplacian_modes(3, 2)
    rng = np.random.default_rng(0)
    w = rng.normal(size=(4, 4, 3, 3))
    g = filter_gamma(w, m)
    vecs = m.vectors.copy()
    grp = m.groups[1]
    th = 0.7
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    vecs[grp] = rot @ vecs[grp]
    rotated = LaplacianModes(m.eigenvalues, vecs, m.groups, 3, 2)
    np.testing.assert_allclose(filter_gamma(w, rotated), g, rtol=1e-9, atol=1e-15)


def test_mean_channel_jensen():
    net = build_network(3, 6, 3, 1, 16, seed=1)
    m = grid_laplacian_modes(3)
    mc = mean_channel(net)
    for k in range(1, 4):
        assert np.all(filter_spectrum(mc, k, m) <= filter_spectrum(net, k, m) + 1e-15)


def test_shape_mismatch():
    with pytest.raises(ParameterError):
        filter_spectrum(build_network(2, 2, 3, 1, 8), 1, grid_laplacian_modes(2))
    with pytest.raises(ParameterError):
        filter_spectrum(build_network(2, 2, 3, 1, 8), 3, grid_laplacian_modes(3))


def test_evolution_ratios():
    net = build_network(2, 4, 3, 1, 8, seed=0)
    w = [l.weight for l in net.layers]
    trace = spectrum_evolution({0: w, 1: w, 2: w}, grid_laplacian_modes(3))
    for k in (1, 2):
        np.testing.assert_allclose(trace.final_ratios(k), 1.0)


def test_evolution_excludes_zero_initial_projection():
    net = homogeneous_network(2, 3, 1, 8)
    w = [l.weight for l in net.layers]
    trace = spectrum_evolution({0: w, 4: [2 * x for x in w]}, grid_laplacian_modes(3))
    r = trace.final_ratios(1)
    assert r[0] == pytest.approx(4.0)
    assert np.all(np.isnan(r[1:]))
    assert trace.excluded[1].tolist() == [False, True, True]
    with pytest.raises(ParameterError):
        spectrum_evolution({1: w}, grid_laplacian_modes(3))


def test_trace_csv(tmp_path):
    net = build_network(2, 2, 3, 1, 8, seed=0)
    w = [l.weight for l in net.layers]
    trace = spectrum_evolution({0: w, 2: w}, grid_laplacian_modes(3))
    trace.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "layer,eigenvalue,eigenspace,t,gamma,ratio"
    assert len(lines) == 1 + 2 * 2 * 3
