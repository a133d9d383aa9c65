import numpy as np
import pytest

from rmkit.measurement import outcome_probabilities, x_exact, x_exact_batch
from rmkit.mps import (MPSState, compress, is_left_canonical, mps_distribution, mps_probabilities_batch,
                       mps_probability, mps_reduced_purity, mps_reduced_state, mps_x,
                       to_statevector)
from rmkit.states import (ResourceLimitError, from_statevector, make_ghz, make_haar_random_pure,
                          make_maximally_mixed, make_product, make_xy_quench, partial_trace,
                          purity)
from rmkit.unitaries import UnitaryAngles, kron_all, sample_haar_angles, sample_haar_batch


def random_product(n, rng):
    locals_ = []
    for _ in range(n):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        locals_.append(v / np.linalg.norm(v))
    return locals_, from_statevector(kron_all([v[:, None] for v in locals_])[:, 0])


def test_random_product_helper_is_little_endian(rng):
    locals_, st = random_product(2, rng)
    assert st.psi[1] == pytest.approx(locals_[0][1] * locals_[1][0])


def test_product_bond_one(rng):
    mps, fid = compress(make_product(5), 1)
    assert fid == pytest.approx(1.0, abs=1e-12)
    assert mps.bond_dims == [1, 1, 1, 1]
    _, st = random_product(4, rng)
    assert compress(st, 1)[1] == pytest.approx(1.0, abs=1e-12)


def test_ghz_bond_two():
    mps, fid = compress(make_ghz(6), 2)
    assert fid == pytest.approx(1.0, abs=1e-12)
    assert max(mps.bond_dims) == 2
    assert compress(make_ghz(6), 1)[1] == pytest.approx(0.5, abs=1e-12)


def test_fidelity_monotone_on_quench():
    st = make_xy_quench(8, alpha=1.0, t=2.0)
    fids = [compress(st, D)[1] for D in range(1, 17)]
    assert np.all(np.diff(fids) >= -1e-12)
    assert fids[-1] == pytest.approx(1.0, abs=1e-10)
    assert fids[0] < 0.99


@pytest.mark.parametrize("n", [1, 2, 4, 6])
def test_full_rank_reproduces_dense(n, rng):
    st = make_haar_random_pure(n, rng)
    mps, fid = compress(st, 2 ** (n // 2))
    assert fid == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(to_statevector(mps), st.psi, atol=1e-12)
    xi, phi = sample_haar_batch(n, 20, rng)
    np.testing.assert_allclose(mps_probabilities_batch(mps, xi, phi),
                               outcome_probabilities(st, xi, phi), atol=1e-9)
    ang = UnitaryAngles(xi[0], phi[0])
    assert mps_x(mps, ang) == pytest.approx(x_exact(st, ang), abs=1e-9)


def test_probabilities_sum_to_one_truncated(rng):
    st = make_xy_quench(6, t=1.5)
    mps, _ = compress(st, 2)
    xi, phi = sample_haar_batch(6, 30, rng)
    np.testing.assert_allclose(mps_probabilities_batch(mps, xi, phi).sum(axis=1), 1.0, atol=1e-12)
    assert mps.norm() == pytest.approx(1.0, abs=1e-12)


def test_single_probability_matches_batch(rng):
    mps, _ = compress(make_haar_random_pure(4, rng), 3)
    ang = sample_haar_angles(4, rng)
    dist = mps_distribution(mps, ang)
    batch = mps_probabilities_batch(mps, ang.xi, ang.phi)[0]
    for s in (0, 5, 15):
        assert mps_probability(mps, ang, s) == pytest.approx(batch[s] / batch.sum(), abs=1e-12)
        assert dist.probs[s] == pytest.approx(batch[s] / batch.sum(), abs=1e-12)
    with pytest.raises(ValueError):
        mps_probability(mps, ang, 16)


def test_identity_angles_product_delta():
    mps, _ = compress(make_product(4), 1)
    p = mps_probabilities_batch(mps, np.zeros(4), np.zeros(4))[0]
    expected = np.zeros(16)
    expected[0] = 1
    np.testing.assert_allclose(p, expected, atol=1e-14)


def test_bond_one_product_formula(rng):
    locals_, st = random_product(3, rng)
    mps, _ = compress(st, 1)
    ang = sample_haar_angles(3, rng)
    factors = [x_exact(from_statevector(v), UnitaryAngles(ang.xi[i:i + 1], ang.phi[i:i + 1]))
               for i, v in enumerate(locals_)]
    assert mps_x(mps, ang) == pytest.approx(np.prod(factors), rel=1e-10)


def test_single_qubit_x_formula():
    for xi in (0.0, 0.3, 0.5, 1.0):
        ang = UnitaryAngles(np.array([xi]), np.array([1.1]))
        assert x_exact(make_product(1), ang) == pytest.approx(2 - 6 * xi + 6 * xi**2, abs=1e-12)


def test_reduced_purities(rng):
    mps, _ = compress(make_product(6), 1)
    assert mps_reduced_purity(mps, [0, 1, 2]) == pytest.approx(1.0, abs=1e-12)
    mps, _ = compress(make_ghz(6), 2)
    assert mps_reduced_purity(mps, [0, 2, 4]) == pytest.approx(0.5, abs=1e-12)
    st = make_haar_random_pure(6, rng)
    mps, _ = compress(st, 8)
    for keep in ([0], [1, 4], [0, 2, 3, 5]):
        dense = partial_trace(st, keep)
        red = mps_reduced_state(mps, keep)
        np.testing.assert_allclose(red.rho, dense.rho, atol=1e-10)
        assert purity(red) == pytest.approx(purity(dense), abs=1e-10)


def test_truncated_reduced_matches_dense_of_truncated(rng):
    st = make_xy_quench(8, t=1.0)
    mps, _ = compress(st, 4)
    trunc = from_statevector(to_statevector(mps))
    keep = [2, 3, 4, 5]
    np.testing.assert_allclose(mps_reduced_state(mps, keep).rho,
                               partial_trace(trunc, keep).rho, atol=1e-10)
    xi, phi = sample_haar_batch(8, 5, rng)
    np.testing.assert_allclose(x_exact_batch(trunc, xi, phi),
                               [mps_x(mps, UnitaryAngles(a, b)) for a, b in zip(xi, phi)],
                               rtol=1e-9)


def test_reduced_state_limits():
    a = np.zeros((1, 2, 1), dtype=complex)
    a[0, 0, 0] = 1
    mps = MPSState([a.copy() for _ in range(13)], 1)
    with pytest.raises(ResourceLimitError):
        mps_reduced_state(mps, range(13))
    with pytest.raises(ValueError):
        mps_reduced_state(mps, [13])
    assert mps_reduced_purity(mps, [0, 12]) == pytest.approx(1.0)


def test_left_canonical(rng):
    mps, _ = compress(make_haar_random_pure(7, rng), 4)
    assert is_left_canonical(mps)
    mps.tensors[0] = 2 * mps.tensors[0]
    assert not is_left_canonical(mps)


def test_json_round_trip(tmp_path, rng):
    mps, _ = compress(make_haar_random_pure(5, rng), 3)
    path = tmp_path / "m.json"
    mps.save(path)
    back = MPSState.load(path)
    assert back.max_bond == 3 and back.bond_dims == mps.bond_dims
    for a, b in zip(back.tensors, mps.tensors):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(back.discarded_weight, mps.discarded_weight)


def test_invalid_inputs(rng):
    with pytest.raises(ValueError):
        compress(make_maximally_mixed(2), 2)
    with pytest.raises(ValueError):
        compress(make_product(2), 0)
    with pytest.raises(ValueError):
        MPSState([np.zeros((1, 2, 2)), np.zeros((3, 2, 1))], 4)
    mps, _ = compress(make_product(3), 1)
    with pytest.raises(ValueError):
        mps_probabilities_batch(mps, np.zeros(2), np.zeros(2))


def test_discarded_weight_tracks_infidelity():
    st = make_xy_quench(8, t=2.0)
    mps, fid = compress(st, 2)
    # single truncation step bounds: 1 - F is at most the total discarded weight
    assert 1 - fid <= sum(mps.discarded_weight) + 1e-12
    assert max(mps.discarded_weight) > 0
