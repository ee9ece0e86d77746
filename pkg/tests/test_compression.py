import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapignn import compression as cp
from mapignn import tensor as T
from mapignn.errors import ContractError, IncompleteSampleError, ShapeError

from conftest import FD_RTOL, fd_check

SPECS = [cp.ModalitySpec("t2w", 6, 3), cp.ModalitySpec("adc", 5, 2), cp.ModalitySpec("hbv", 4, 4)]


def make_params(rng, specs=SPECS):
    params = T.ParameterSet()
    for s in specs:
        cp.init_modality(s, params, rng)
    return params


def test_spec_validation():
    with pytest.raises(ContractError):
        cp.ModalitySpec("x", 4, 5)
    with pytest.raises(ContractError):
        cp.ModalitySpec("x", 4, 0)
    assert cp.ModalitySpec("x", 32, 8).hidden_dim == 16


def test_encoder_shapes(rng):
    params = make_params(rng)
    raw = [rng.standard_normal((7, s.raw_dim)) for s in SPECS]
    latents = [cp.encode_modality(r, s, params) for r, s in zip(raw, SPECS)]
    x = cp.assemble_patient_vector(latents, SPECS)
    assert x.shape == (7, 9)
    parts = cp.split_patient_vector(x.data, SPECS)
    for part, z in zip(parts, latents):
        assert np.array_equal(part, z.data)


def test_wrong_width_is_shape_error(rng):
    params = make_params(rng)
    with pytest.raises(ShapeError):
        cp.encode_modality(np.zeros((2, 5)), SPECS[0], params)


def test_missing_modality_is_incomplete(rng):
    with pytest.raises(IncompleteSampleError):
        cp.assemble_patient_vector([np.zeros(3), None, np.zeros(4)], SPECS, "p7")
    with pytest.raises(IncompleteSampleError):
        cp.assemble_patient_vector([np.zeros(3)], SPECS)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=5), st.integers(0, 2**31 - 1))
def test_assembly_is_lossless(dims, seed):
    rng = np.random.default_rng(seed)
    specs = [cp.ModalitySpec(f"m{i}", d + 2, d) for i, d in enumerate(dims)]
    parts = [rng.standard_normal(d) for d in dims]
    fv = cp.assemble_patient_vector(parts, specs, "p")
    assert len(fv) == sum(dims)
    for a, b in zip(cp.split_patient_vector(fv.values, specs), parts):
        assert np.array_equal(a, b)


def test_autoencoder_gradients(rng):
    params = make_params(rng)
    raw = [rng.standard_normal((5, s.raw_dim)) for s in SPECS]

    def loss():
        total = cp.reconstruction_loss(raw[0], SPECS[0], params)
        for r, s in zip(raw[1:], SPECS[1:]):
            total = total + cp.reconstruction_loss(r, s, params)
        return total

    leaves = list(params.values())
    assert fd_check(loss, leaves, rng, coords=max(20, len(leaves))) < FD_RTOL


def test_identity_autoencoder_converges():
    rng = np.random.default_rng(0)
    spec = cp.ModalitySpec("id", 4, 4)
    params = make_params(rng, [spec])
    data = rng.standard_normal((10, 4))
    for _ in range(3000):
        params.zero_grad()
        T.backward(cp.reconstruction_loss(data, spec, params, activation="identity"))
        T.adam_step(params, lr=1e-2)
    z = cp.encode_modality(data, spec, params, "identity")
    recon = cp.decode_modality(z, spec, params, "identity").data
    assert np.max(np.abs(recon - data)) < 1e-2


def test_zscore_uses_only_given_rows(rng):
    raw = rng.standard_normal((10, 3))
    raw[:, 2] = 5.0
    z = cp.ZScore.fit(raw, np.arange(6))
    out = z.apply(raw)
    assert np.allclose(out[:6, :2].mean(axis=0), 0.0, atol=1e-12)
    assert np.all(out[:, 2] == 0.0)  # constant column is centred, not divided by zero
