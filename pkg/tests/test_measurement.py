import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from diffonebit.errors import InvalidArgument, ParseError
from diffonebit.measurement import (
    DenseOperator,
    MaskOperator,
    OneBitObservation,
    Problem,
    apply,
    decode_problem,
    encode_problem,
    gaussian_operator,
    load_problem,
    mask_operator,
    quantize_onebit,
    read_vector_csv,
    sample_logistic,
    save_problem,
    write_vector_csv,
)


def test_gaussian_operator_variance():
    op = gaussian_operator(7, 4, 64)
    a = op.to_dense()
    assert a.shape == (4, 64)
    # sample variance of 256 normals with variance 1/4: se = var * sqrt(2/(n-1))
    se = 0.25 * np.sqrt(2 / 255)
    assert abs(a.var() - 0.25) < 3 * se


def test_gaussian_operator_deterministic():
    a = gaussian_operator(3, 5, 9).to_dense()
    b = gaussian_operator(3, 5, 9).to_dense()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gaussian_operator(4, 5, 9).to_dense())


def test_gaussian_operator_one_sixteenth_ratio():
    op = gaussian_operator(0, 256, 4096)
    assert (op.rows, op.cols) == (256, 4096)


@pytest.mark.parametrize("m,n", [(0, 4), (4, 0)])
def test_gaussian_operator_zero_dims(m, n):
    with pytest.raises(InvalidArgument):
        gaussian_operator(0, m, n)


def test_mask_half():
    op = mask_operator(11, 0.5, 8)
    assert op.rows == 4
    assert len(set(op.indices.tolist())) == 4
    assert np.all(np.diff(op.indices) > 0)


def test_mask_full_is_identity():
    op = mask_operator(5, 1.0, 6)
    assert op.indices.tolist() == list(range(6))
    x = np.arange(6.0)
    assert np.array_equal(op.apply(x), x)


def test_mask_adjoint_zero_fills():
    op = MaskOperator([0, 3], 4)
    assert op.adjoint(np.array([1.0, 2.0])).tolist() == [1.0, 0.0, 0.0, 2.0]


@pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5, 0.01])
def test_mask_bad_ratio(ratio):
    with pytest.raises(InvalidArgument):
        mask_operator(0, ratio, 8)


def test_apply_examples():
    assert apply(DenseOperator([[1, 0], [0, 1]]), [3, -5]).tolist() == [3, -5]
    assert apply(DenseOperator([[1, 1], [1, -1]]), [2, 1]).tolist() == [3, 1]


def test_apply_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        apply(DenseOperator(np.eye(3)), np.ones(2))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 20), n=st.integers(1, 20), kind=st.sampled_from(["dense", "mask"]))
def test_adjoint_identity(seed, m, n, kind):
    rng = np.random.default_rng(seed)
    if kind == "dense":
        op = gaussian_operator(seed, m, n)
    else:
        op = mask_operator(seed, rng.uniform(0.5 / n + 1e-9, 1.0), n, scale=rng.uniform(0.5, 2))
    v = rng.standard_normal(op.cols)
    u = rng.standard_normal(op.rows)
    lhs = np.dot(op.apply(v), u)
    rhs = np.dot(v, op.adjoint(u))
    scale = np.linalg.norm(op.apply(v)) * np.linalg.norm(u) + 1e-300
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_quantize_noiseless_example():
    op = DenseOperator(np.eye(3))
    obs = quantize_onebit(op, [2.5, -0.1, 0.0], 0.0, seed=1)
    assert obs.bits.tolist() == [1, -1, 1]
    assert obs.model == "probit" and obs.sigma == 0.0


def test_quantize_noiseless_seed_independent(rng):
    op = gaussian_operator(1, 30, 5)
    x = rng.standard_normal(5)
    assert quantize_onebit(op, x, 0.0, 1) == quantize_onebit(op, x, 0.0, 999)


def test_quantize_tags_sigma():
    obs = quantize_onebit(DenseOperator(np.eye(2)), [1.0, 2.0], 0.5, 0)
    assert obs.model == "probit" and obs.sigma == 0.5


def test_quantize_negative_sigma():
    with pytest.raises(InvalidArgument):
        quantize_onebit(DenseOperator(np.eye(2)), [1.0, 2.0], -0.1, 0)


def _constant_rows(m, value):
    # m rows of a 1-column operator, each giving a^T x = value for x = [1]
    return DenseOperator(np.full((m, 1), value)), np.array([1.0])


def test_probit_rate_monte_carlo():
    op, x = _constant_rows(100_000, 0.5)
    obs = quantize_onebit(op, x, 0.5, seed=2024)
    assert abs(np.mean(obs.bits == 1) - norm.cdf(1.0)) < 0.005


def test_probit_flip_rate_matches_cdf():
    op, x = _constant_rows(100_000, -0.3)
    obs = quantize_onebit(op, x, 0.4, seed=8)
    flips = np.mean(obs.bits == 1)
    assert abs(flips - norm.cdf(-0.3 / 0.4)) < 0.005


def test_logistic_rate_monte_carlo():
    op, x = _constant_rows(100_000, 2.0)
    obs = sample_logistic(op, x, seed=77)
    assert obs.model == "logistic" and obs.sigma == 0.0
    assert abs(np.mean(obs.bits == 1) - 1 / (1 + np.exp(-2.0))) < 0.005


def test_logistic_symmetric_at_zero():
    op, x = _constant_rows(100_000, 0.0)
    obs = sample_logistic(op, x, seed=78)
    assert abs(np.mean(obs.bits == 1) - 0.5) < 0.005


def test_logistic_saturates():
    op, x = _constant_rows(1000, 50.0)
    assert np.all(sample_logistic(op, x, seed=1).bits == 1)


def test_observation_rejects_bad_bits():
    with pytest.raises(InvalidArgument):
        OneBitObservation(np.array([1, 0, -1]), "probit", 0.5)
    with pytest.raises(InvalidArgument):
        OneBitObservation(np.array([1, -1]), "probit", float("nan"))


def _problem(kind="dense"):
    if kind == "dense":
        op = gaussian_operator(3, 6, 4)
    else:
        op = mask_operator(3, 0.5, 10, scale=1.5)
    x = np.random.default_rng(0).standard_normal(op.cols)
    obs = quantize_onebit(op, x, 0.5, 9) if kind == "dense" else sample_logistic(op, x, 9)
    return Problem(op, obs, x, {"note": "test"})


@pytest.mark.parametrize("kind", ["dense", "mask"])
def test_problem_roundtrip(tmp_path, kind):
    prob = _problem(kind)
    path = tmp_path / "p.obit"
    save_problem(path, prob)
    back = load_problem(path)
    assert np.array_equal(back.operator.to_dense(), prob.operator.to_dense())
    assert back.operator.operator_id == prob.operator.operator_id
    assert back.observation == prob.observation
    assert np.array_equal(back.truth, prob.truth)
    assert back.meta["note"] == "test" and "rng_algorithm" in back.meta
    assert encode_problem(back) == path.read_bytes()


def test_problem_layout_header():
    data = encode_problem(_problem())
    assert data[:5] == b"OBIT1"
    assert int.from_bytes(data[5:7], "little") == 1


def test_parse_bad_magic():
    data = bytearray(encode_problem(_problem()))
    data[0:5] = b"XXXXX"
    with pytest.raises(ParseError) as err:
        decode_problem(bytes(data))
    assert err.value.offset == 0


@pytest.mark.parametrize("cut", [3, 6, 12, 40, -3])
def test_parse_truncated_reports_offset(cut):
    data = encode_problem(_problem())
    with pytest.raises(ParseError) as err:
        decode_problem(data[:cut])
    assert err.value.offset is not None and 0 <= err.value.offset <= len(data)
    assert "offset" in str(err.value)


def test_parse_unknown_section_offset():
    data = encode_problem(_problem())
    bad = data + bytes([9]) + (0).to_bytes(8, "little")
    with pytest.raises(ParseError) as err:
        decode_problem(bad)
    assert err.value.offset == len(data)


def test_parse_bad_bit_value():
    prob = _problem()
    data = bytearray(encode_problem(prob))
    data[-1] = 0
    with pytest.raises(ParseError):
        decode_problem(bytes(data))


def test_vector_csv_roundtrip(tmp_path):
    x = np.random.default_rng(1).standard_normal(7)
    path = tmp_path / "x.csv"
    write_vector_csv(path, x, {"config_hash": "abc"})
    assert path.read_text().startswith("# config_hash=abc\n")
    assert np.array_equal(read_vector_csv(path), x)
