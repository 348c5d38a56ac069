import numpy as np
import pytest

from rtfe import checkpoint
from rtfe.scorers import FAMILIES, ScorerSpec, init_state, loss_and_grad, sgd_step
from rtfe.trainer import corrupt


def _trained(family, fitted):
    spec = ScorerSpec(family, 8)
    state = init_state(spec, 6, 3, 4, seed=9)
    rng = np.random.default_rng(0)
    batch = corrupt(np.array([[0, 1, 2, 3], [4, 0, 5, 1]]), 2, (0.5, 0.5, 0.0), 6, 3, rng)
    _, g = loss_and_grad(state, spec, batch)
    sgd_step(state, g, 0.1, "adagrad")
    state.fitted_timestamp = fitted
    return state


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("fitted", [None, "static", 0, 3])
def test_write_read_write_bit_identical(family, fitted):
    state = _trained(family, fitted)
    data = checkpoint.to_bytes(state)
    back = checkpoint.from_bytes(data)
    assert checkpoint.to_bytes(back) == data
    assert back.fitted_timestamp == fitted and back.family == family
    assert back.n_timestamps == state.n_timestamps
    for name, mat in state.parameters().items():
        got = back.parameters()[name]
        assert got.dtype == np.float64 and got.shape == mat.shape
        if not (family == "RotatE" and name == "relation"):
            assert np.array_equal(got, mat.astype(np.float32))
    for name, acc in state.optimizer_state.items():
        assert np.array_equal(back.optimizer_state[name], acc.astype(np.float32))


def test_rotate_phases_reduced_on_write():
    spec = ScorerSpec("RotatE", 4)
    state = init_state(spec, 3, 2, 1)
    state.relation_features[0] = [7.0, -9.5]
    state.relation_features[1] = [np.pi, -np.pi]
    back = checkpoint.from_bytes(checkpoint.to_bytes(state))
    phases = back.relation_features
    assert np.all((phases >= -np.pi) & (phases < np.pi))
    assert np.allclose(np.exp(1j * phases), np.exp(1j * state.relation_features), atol=1e-6)


def test_file_round_trip(tmp_path):
    state = _trained("TComplEx", 2)
    checkpoint.save(state, tmp_path / "a.rtfe")
    back = checkpoint.load(tmp_path / "a.rtfe")
    checkpoint.save(back, tmp_path / "b.rtfe")
    assert (tmp_path / "a.rtfe").read_bytes() == (tmp_path / "b.rtfe").read_bytes()


def test_header_layout():
    state = init_state(ScorerSpec("ComplEx", 8), 6, 3, 4)
    data = checkpoint.to_bytes(state)
    magic, version, family, d, nv, nr, nt, flags, fitted = checkpoint.HEADER.unpack_from(data)
    assert (magic, version, FAMILIES[family], d, nv, nr, nt, flags, fitted) == (
        b"RTFE", 1, "ComplEx", 8, 6, 3, 4, 0, checkpoint.FITTED_NONE)


def test_corrupt_files_rejected():
    data = checkpoint.to_bytes(_trained("DE-SimplE", 1))
    with pytest.raises(ValueError, match="not an RTFE"):
        checkpoint.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="truncated"):
        checkpoint.from_bytes(data[:-5])
    with pytest.raises(ValueError, match="trailing"):
        checkpoint.from_bytes(data + b"\0")
    with pytest.raises(ValueError, match="version"):
        checkpoint.from_bytes(data[:4] + (9).to_bytes(4, "little") + data[8:])
