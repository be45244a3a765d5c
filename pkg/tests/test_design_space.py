from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cemrm.design_space import (
    DesignVector, DimensionError, FingerDesign, apply_action, bounds, design_dim,
    global_mount_positions, mount_position, normalize, denormalize, slot_names, uniform_baseline,
    validate,
)


def _with(design: DesignVector, name: str, **changes) -> DesignVector:
    from dataclasses import replace
    return replace(design, **{name: replace(getattr(design, name), **changes)})


def in_bounds_vectors(S=4):
    lo, hi = bounds(S)
    return st.tuples(*[st.floats(float(a), float(b)) for a, b in zip(lo, hi)]).map(np.array)


def test_dimension_is_36_for_four_blocks():
    assert design_dim(4) == 36
    assert uniform_baseline().to_array().shape == (36,)
    assert len(slot_names()) == 36


@pytest.mark.parametrize(
    "phi,R,expected",
    [(0.0, 40.0, (40.0, 0.0)), (math.pi / 2, 40.0, (0.0, 40.0)),
     (-math.pi / 4, 1.0, (math.sqrt(2) / 2, -math.sqrt(2) / 2))],
)
def test_mount_position_examples(phi, R, expected):
    np.testing.assert_allclose(mount_position(phi, R), expected, atol=1e-12)


@given(st.floats(-10, 10), st.floats(0.1, 100))
def test_mount_position_lies_on_circle(phi, R):
    assert abs(np.linalg.norm(mount_position(phi, R)) - R) <= 1e-12 * R


def test_baseline_values():
    base = uniform_baseline(4, 40.0)
    for f in base.fingers():
        assert f.l_seg == 12.0 and f.l_fle == 12.0
        assert f.psi == 0.0
        assert all(t == 0.5 * h for h, t in zip(f.h, f.h_ten))
        assert f.h == (11.0,) * 4
    assert base.thumb.phi == 0.0
    assert base.index.phi == -math.pi / 4
    assert base.middle.phi == math.pi / 4


@pytest.mark.parametrize("S,R", [(2, 40.0), (4, 40.0), (6, 55.0)])
def test_baseline_is_valid(S, R):
    assert validate(uniform_baseline(S, R))


def test_baseline_needs_two_blocks():
    with pytest.raises(ValueError):
        uniform_baseline(1)


def test_apply_zero_action_is_identity():
    base = uniform_baseline()
    assert apply_action(base, np.zeros(36)) == base


def test_apply_action_saturates_length():
    a = np.zeros(36)
    a[0] = 100.0
    assert apply_action(uniform_baseline(), a).thumb.l_seg == 18.0


def test_apply_action_couples_tendon_height_to_thickness():
    base = uniform_baseline()
    a = np.zeros(36)
    a[2] = 4.0 - 11.0  # thumb h[0] -> 4
    a[6] = 10.0 - 5.5  # thumb h_ten[0] -> 10
    out = apply_action(base, a)
    assert out.thumb.h[0] == 4.0
    assert out.thumb.h_ten[0] == 4.0


def test_apply_action_rejects_wrong_dimension():
    with pytest.raises(DimensionError):
        apply_action(uniform_baseline(), np.zeros(35))


@given(st.lists(st.floats(-1e3, 1e3), min_size=36, max_size=36))
def test_apply_action_output_is_in_bounds(values):
    out = apply_action(uniform_baseline(), np.array(values))
    lo, hi = bounds()
    x = out.to_array()
    assert np.all(x >= lo) and np.all(x <= hi)
    for f in out.fingers():
        assert all(t <= h for h, t in zip(f.h, f.h_ten))
        assert -math.pi / 4 < f.psi < math.pi / 4


@given(in_bounds_vectors())
def test_flatten_round_trip_is_exact(vec):
    assert np.array_equal(DesignVector.from_array(vec).to_array(), vec)


def test_dict_round_trip():
    base = uniform_baseline()
    assert DesignVector.from_dict(base.to_dict()) == base


def test_normalization_round_trip():
    u = np.linspace(-1, 1, 36)
    np.testing.assert_allclose(normalize(denormalize(u)), u, rtol=0, atol=1e-15)


def test_tendon_height_out_of_range_is_a_bound_violation():
    d = _with(uniform_baseline(), "middle", h_ten=(5.5, 5.5, 20.0, 5.5))
    v = validate(d)
    assert not v
    assert any(r.startswith("bound violation") for r in v.reasons)


def test_coincident_index_and_middle_penetrate():
    d = _with(_with(uniform_baseline(), "index", phi=0.0), "middle", phi=0.0)
    d = _with(d, "thumb", phi=math.pi / 2)
    v = validate(d)
    assert not v
    assert any("finger penetration: index/middle" in r for r in v.reasons)


def test_penetration_threshold_in_radius():
    # index at -pi/4 and middle at +pi/4 sit R*sqrt(2) apart; footprints need > 12 mm
    small, large = uniform_baseline(R=8.0), uniform_baseline(R=9.0)
    m = global_mount_positions(small)
    assert np.linalg.norm(m["index"] - m["middle"]) == pytest.approx(11.313708498984761, abs=1e-12)
    assert any("index/middle" in r for r in validate(small).reasons)
    assert not any("index/middle" in r for r in validate(large).reasons)


def test_baseline_mount_positions():
    m = global_mount_positions(uniform_baseline())
    np.testing.assert_allclose(m["thumb"], [0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(m["index"], [11.715728752538098, 28.284271247461902], atol=1e-12)
    np.testing.assert_allclose(m["middle"], [11.715728752538098, -28.284271247461902], atol=1e-12)


def test_validate_is_pure():
    d = uniform_baseline()
    assert validate(d) == validate(d)


def test_finger_design_rejects_mismatched_blocks():
    with pytest.raises(ValueError):
        FingerDesign(12, 12, (11, 11), (5.5,), 0.0, 0.0)
