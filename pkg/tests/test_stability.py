import json
import math

import numpy as np
import pytest

from mcflab import ambient
from mcflab.errors import CertificationError
from mcflab.stability import (StabilityCertificate, certify_strong_stability, partial_ricci,
                              second_variation_form, shape_quadratic, stability_operator)
from mcflab.submanifold import curve_from_function, mean_curvature

from conftest import circle, latitude


def riemann_for(imm):
    return imm.chart.riemann(imm.samples)


def test_partial_ricci_flat_is_zero(plane):
    c = circle(plane)
    assert np.abs(partial_ricci(riemann_for(c), mean_curvature(c))).max() < 1e-10


def test_partial_ricci_neck(neck):
    np.testing.assert_allclose(partial_ricci(riemann_for(neck), mean_curvature(neck))[:, 0, 0], -1.0, atol=1e-8)


def test_partial_ricci_warped_neck(warped_neck):
    Rc = partial_ricci(riemann_for(warped_neck), mean_curvature(warped_neck))
    np.testing.assert_allclose(Rc, np.broadcast_to(-np.eye(2), Rc.shape), atol=1e-8)


def test_shape_quadratic_values(neck, sphere, plane):
    assert np.abs(shape_quadratic(mean_curvature(neck))).max() < 1e-10
    np.testing.assert_allclose(shape_quadratic(mean_curvature(latitude(sphere, np.pi / 4)))[:, 0, 0], 1.0, atol=1e-4)
    np.testing.assert_allclose(shape_quadratic(mean_curvature(circle(plane, 2.0)))[:, 0, 0], 0.25, atol=1e-10)


def test_neck_certificate(neck):
    cert = certify_strong_stability(neck)
    assert cert.c0 == pytest.approx(1.0, abs=1e-3)
    assert cert.verdict


def test_equator_certificate(equator):
    cert = certify_strong_stability(equator)
    assert cert.c0 == pytest.approx(-1.0, abs=1e-3)
    assert not cert.verdict


def test_torus_geodesic_certificate():
    torus = ambient.flat_torus()
    c = curve_from_function(torus, lambda u: np.stack([u, np.full_like(u, np.pi)], -1), 64)
    cert = certify_strong_stability(c)
    assert abs(cert.c0) <= 1e-6
    assert not cert.verdict


def test_warped_certificate(warped_neck):
    cert = certify_strong_stability(warped_neck)
    assert cert.c0 == pytest.approx(1.0, abs=1e-2)
    np.testing.assert_allclose(cert.eigenvalues, 1.0, atol=1e-6)


def test_certificate_invariants(warped_neck):
    cert = certify_strong_stability(warped_neck)
    assert np.abs(cert.operators - np.swapaxes(cert.operators, -1, -2)).max() < 1e-8
    assert cert.c0 == cert.eigenvalues.min()


def test_verdict_monotone_in_margin(neck):
    verdicts = [certify_strong_stability(neck, margin).verdict for margin in (1e-6, 1e-4, 0.5, 0.999, 1.5)]
    assert verdicts == sorted(verdicts, reverse=True)


def test_margin_must_be_positive(neck):
    with pytest.raises(ValueError):
        certify_strong_stability(neck, 0.0)


def test_frame_rotation_invariance(warped_neck):
    ff = mean_curvature(warped_neck)
    R = riemann_for(warped_neck)
    base = np.linalg.eigvalsh(stability_operator(R, ff))
    rng = np.random.default_rng(5)
    ang = rng.uniform(0, 2 * np.pi, warped_neck.count)
    rot = np.stack([np.stack([np.cos(ang), -np.sin(ang)], -1), np.stack([np.sin(ang), np.cos(ang)], -1)], -2)
    ff.normals = np.einsum("kxy,kyd->kxd", rot, ff.normals)
    ff.h = np.einsum("kxy,kyij->kxij", rot, ff.h)
    rotated = np.linalg.eigvalsh(stability_operator(R, ff))
    assert np.abs(rotated - base).max() < 1e-8


def test_frame_sign_flip_invariance_on_tilted_curve(sphere):
    c = curve_from_function(sphere, lambda u: np.stack([1.2 + 0.2 * np.cos(u), u], -1), 64)
    ff = mean_curvature(c)
    R = riemann_for(c)
    base = np.linalg.eigvalsh(stability_operator(R, ff))
    flip = np.where(np.random.default_rng(0).random(c.count) < 0.5, -1.0, 1.0)
    ff.normals = ff.normals * flip[:, None, None]
    ff.h = ff.h * flip[:, None, None, None]
    assert np.abs(np.linalg.eigvalsh(stability_operator(R, ff)) - base).max() < 1e-8


def test_shape_quadratic_psd(sphere):
    c = curve_from_function(sphere, lambda u: np.stack([1.0 + 0.3 * np.sin(2 * u), u], -1), 64)
    assert np.linalg.eigvalsh(shape_quadratic(mean_curvature(c))).min() >= -1e-10


@pytest.mark.parametrize("fixture", ["neck", "warped_neck"])
def test_second_variation_spot_check(fixture, request):
    imm = request.getfixturevalue(fixture)
    cert = certify_strong_stability(imm)
    rng = np.random.default_rng(11)
    for _ in range(50):
        V = rng.normal(size=(imm.count, imm.m))
        Q, mass = second_variation_form(imm, cert, V)
        assert Q >= cert.c0 * mass - 1e-10


def test_nonfinite_curvature_aborts_with_index():
    def g(X):
        G = np.broadcast_to(np.eye(2), X.shape + (2,)).copy()
        G[..., 1, 1] = np.where(X[..., 0] > 0.9, np.nan, 1.0 + 0.1 * X[..., 0] ** 2)
        return G

    chart = ambient.user_chart(2, g)
    c = curve_from_function(chart, lambda u: np.stack([np.cos(u), np.sin(u)], -1), 32)
    with pytest.raises(CertificationError) as info:
        certify_strong_stability(c)
    assert info.value.index is not None


def test_merge_and_json(tmp_path, neck, equator):
    merged = StabilityCertificate.merge([certify_strong_stability(neck), certify_strong_stability(equator)])
    assert merged.c0 == pytest.approx(-1.0, abs=1e-3)
    path = tmp_path / "s.json"
    merged.write_json(path)
    data = json.loads(path.read_text())
    assert data["samples"] == 128 and data["verdict"] == "not-strongly-stable"
    assert math.isclose(data["c0"], merged.c0)
