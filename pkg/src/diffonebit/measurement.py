"""Forward operators, 1-bit acquisition and the OBIT1 problem-file format."""

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InvalidArgument, ParseError
from .rng import RNG_ALGORITHM, derive_rng

PROBIT = "probit"
LOGISTIC = "logistic"

MAGIC = b"OBIT1"
FORMAT_VERSION = 1

SECTION_META = 0
SECTION_OPERATOR = 1
SECTION_TRUTH = 2
SECTION_OBSERVATION = 3

KIND_DENSE = 0
KIND_MASK = 1

_MODEL_CODES = {PROBIT: 0, LOGISTIC: 1}
_MODEL_NAMES = {v: k for k, v in _MODEL_CODES.items()}


def as_signal(x, n=None, name="x"):
    """Validate and return ``x`` as a read-only float64 vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise InvalidArgument(f"{name} must be a non-empty 1-D vector, got shape {x.shape}")
    if n is not None and x.size != n:
        raise InvalidArgument(f"{name} has length {x.size}, expected {n}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    return x


def _frozen(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


class LinearOperator:
    """Base for the forward maps ``x -> Ax``.

    ``apply`` and ``adjoint`` broadcast over leading axes, so a batch of
    signals of shape (..., N) maps to (..., M).
    """

    kind = None
    rows = 0
    cols = 0

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, u):
        raise NotImplementedError

    def to_dense(self):
        return self.apply(np.eye(self.cols)).T

    def _payload(self):
        raise NotImplementedError

    @property
    def operator_id(self):
        h = hashlib.sha256()
        h.update(bytes([self.kind]))
        h.update(struct.pack("<II", self.rows, self.cols))
        h.update(self._payload())
        return h.hexdigest()[:16]

    def _check_in(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.cols,):
            raise InvalidArgument(f"operator expects length-{self.cols} input, got shape {x.shape}")
        return x

    def _check_out(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape[-1:] != (self.rows,):
            raise InvalidArgument(f"adjoint expects length-{self.rows} input, got shape {u.shape}")
        return u


class DenseOperator(LinearOperator):
    kind = KIND_DENSE

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or min(matrix.shape) < 1:
            raise InvalidArgument(f"matrix must be 2-D and non-empty, got shape {matrix.shape}")
        self.matrix = _frozen(matrix)
        self.rows, self.cols = matrix.shape

    def apply(self, x):
        return self._check_in(x) @ self.matrix.T

    def adjoint(self, u):
        return self._check_out(u) @ self.matrix

    def to_dense(self):
        return self.matrix

    def _payload(self):
        return self.matrix.astype("<f8").tobytes()

    def __repr__(self):
        return f"DenseOperator(rows={self.rows}, cols={self.cols})"


class MaskOperator(LinearOperator):
    """Selects (and scales) a sorted subset of coordinates."""

    kind = KIND_MASK

    def __init__(self, indices, n, scale=1.0):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 1 or indices.size < 1:
            raise InvalidArgument("mask needs at least one index")
        if np.any(np.diff(indices) <= 0):
            raise InvalidArgument("mask indices must be unique and sorted")
        if indices[0] < 0 or indices[-1] >= n:
            raise InvalidArgument(f"mask indices must lie in [0, {n})")
        if not np.isfinite(scale):
            raise InvalidArgument("mask scale must be finite")
        self.indices = _frozen(indices)
        self.scale = float(scale)
        self.rows = indices.size
        self.cols = int(n)

    def apply(self, x):
        return self.scale * self._check_in(x)[..., self.indices]

    def adjoint(self, u):
        u = self._check_out(u)
        out = np.zeros(u.shape[:-1] + (self.cols,))
        out[..., self.indices] = self.scale * u
        return out

    def _payload(self):
        return self.indices.astype("<u4").tobytes() + struct.pack("<d", self.scale)

    def __repr__(self):
        return f"MaskOperator(rows={self.rows}, cols={self.cols}, scale={self.scale})"


@dataclass(frozen=True, eq=False)
class OneBitObservation:
    """Sign bits plus the model that generated them.

    ``model`` is ``"probit"`` (sign of a noisy linear measurement, noise std
    ``sigma``) or ``"logistic"`` (``sigma`` is 0 and unused).
    """

    bits: np.ndarray
    model: str
    sigma: float = 0.0
    operator_id: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or bits.size < 1:
            raise InvalidArgument("observation needs a non-empty 1-D bit vector")
        if not np.all((bits == 1) | (bits == -1)):
            raise InvalidArgument("every bit must be exactly -1 or +1")
        if self.model not in _MODEL_CODES:
            raise InvalidArgument(f"unknown measurement model {self.model!r}")
        sigma = float(self.sigma)
        if not np.isfinite(sigma) or sigma < 0:
            raise InvalidArgument(f"sigma must be finite and non-negative, got {self.sigma}")
        if self.model == LOGISTIC:
            sigma = 0.0
        object.__setattr__(self, "bits", _frozen(bits.astype(np.int8)))
        object.__setattr__(self, "sigma", sigma)

    @property
    def m(self):
        return self.bits.size

    def __eq__(self, other):
        if not isinstance(other, OneBitObservation):
            return NotImplemented
        return (
            self.model == other.model
            and self.sigma == other.sigma
            and self.operator_id == other.operator_id
            and np.array_equal(self.bits, other.bits)
        )


def gaussian_operator(seed, m, n):
    """Dense M x N matrix with i.i.d. N(0, 1/M) entries."""
    if int(m) < 1 or int(n) < 1:
        raise InvalidArgument(f"operator dimensions must be positive, got M={m}, N={n}")
    rng = derive_rng(seed, "gaussian_operator")
    return DenseOperator(rng.standard_normal((int(m), int(n))) / np.sqrt(m))


def mask_operator(seed, mask_ratio, n, scale=1.0):
    """Random pixel mask keeping ``round(mask_ratio * n)`` coordinates."""
    if not (0.0 < mask_ratio <= 1.0):
        raise InvalidArgument(f"mask_ratio must lie in (0, 1], got {mask_ratio}")
    if int(n) < 1:
        raise InvalidArgument("n must be positive")
    m = int(np.floor(mask_ratio * n + 0.5))
    if m < 1:
        raise InvalidArgument(f"mask_ratio={mask_ratio} keeps no coordinates of n={n}")
    rng = derive_rng(seed, "mask_operator")
    perm = rng.permutation(int(n))
    return MaskOperator(np.sort(perm[:m]), n, scale)


def apply(op, x):
    return op.apply(as_signal(x, op.cols))


def signs(u):
    """Elementwise sign with sign(0) = +1."""
    return np.where(np.asarray(u) >= 0, 1, -1).astype(np.int8)


def quantize_onebit(op, x_true, sigma, seed):
    """Probit-sign acquisition ``y = sign(Ax + e)``, ``e ~ N(0, sigma^2)``."""
    if not np.isfinite(sigma) or sigma < 0:
        raise InvalidArgument(f"sigma must be finite and non-negative, got {sigma}")
    u = op.apply(as_signal(x_true, op.cols, "x_true"))
    if sigma > 0:
        u = u + sigma * derive_rng(seed, "quantize_onebit").standard_normal(u.shape)
    return OneBitObservation(signs(u), PROBIT, sigma, op.operator_id)


def sample_logistic(op, x_true, seed):
    """Bits with P(+1) = sigmoid(a_i . x)."""
    u = op.apply(as_signal(x_true, op.cols, "x_true"))
    draws = derive_rng(seed, "sample_logistic").random(u.shape)
    bits = np.where(draws < expit(u), 1, -1).astype(np.int8)
    return OneBitObservation(bits, LOGISTIC, 0.0, op.operator_id)


# --- problem files ---------------------------------------------------------


@dataclass
class Problem:
    operator: LinearOperator
    observation: OneBitObservation
    truth: np.ndarray = None
    meta: dict = field(default_factory=dict)


def _operator_payload(op):
    head = struct.pack("<BII", op.kind, op.rows, op.cols)
    return head + op._payload()


def _section(tag, payload):
    return struct.pack("<BQ", tag, len(payload)) + payload


def encode_problem(problem):
    op, obs = problem.operator, problem.observation
    if obs.m != op.rows:
        raise InvalidArgument(f"observation has {obs.m} bits but operator has {op.rows} rows")
    meta = {"rng_algorithm": RNG_ALGORITHM, **problem.meta}
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    buf.write(_section(SECTION_META, json.dumps(meta, sort_keys=True).encode("utf-8")))
    buf.write(_section(SECTION_OPERATOR, _operator_payload(op)))
    if problem.truth is not None:
        truth = as_signal(problem.truth, op.cols, "truth")
        buf.write(_section(SECTION_TRUTH, truth.astype("<f8").tobytes()))
    obs_payload = struct.pack("<BdI", _MODEL_CODES[obs.model], obs.sigma, obs.m)
    obs_payload += obs.bits.astype("<i1").tobytes()
    buf.write(_section(SECTION_OBSERVATION, obs_payload))
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated {what}: need {n} bytes", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _decode_operator(payload, base):
    r = _Reader(payload)
    try:
        kind, m, n = r.unpack("<BII", "operator header")
        if kind == KIND_DENSE:
            raw = r.take(8 * m * n, "dense matrix")
            op = DenseOperator(np.frombuffer(raw, dtype="<f8").reshape(m, n))
        elif kind == KIND_MASK:
            idx = np.frombuffer(r.take(4 * m, "mask indices"), dtype="<u4")
            (scale,) = r.unpack("<d", "mask scale")
            op = MaskOperator(idx.astype(np.int64), n, scale)
        else:
            raise ParseError(f"unknown operator kind {kind}", base)
    except ParseError as exc:
        raise ParseError(exc.message, base + (exc.offset or 0)) from None
    except InvalidArgument as exc:
        raise ParseError(f"invalid operator: {exc}", base) from None
    return op


def decode_problem(data):
    r = _Reader(bytes(data))
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise ParseError("bad magic, not an OBIT1 file", 0)
    (version,) = r.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}", len(MAGIC))
    meta, op, truth, obs_fields = {}, None, None, None
    while r.pos < len(r.data):
        start = r.pos
        tag, length = r.unpack("<BQ", "section header")
        base = r.pos
        payload = r.take(length, f"section {tag} payload")
        if tag == SECTION_META:
            try:
                meta = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise ParseError("malformed metadata section", base) from None
        elif tag == SECTION_OPERATOR:
            op = _decode_operator(payload, base)
        elif tag == SECTION_TRUTH:
            if length % 8:
                raise ParseError("truth section length is not a multiple of 8", start)
            truth = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        elif tag == SECTION_OBSERVATION:
            pr = _Reader(payload)
            try:
                code, sigma, m = pr.unpack("<BdI", "observation header")
                bits = np.frombuffer(pr.take(m, "bits"), dtype="<i1")
            except ParseError as exc:
                raise ParseError("truncated observation", base + (exc.offset or 0)) from None
            if code not in _MODEL_NAMES:
                raise ParseError(f"unknown model code {code}", base)
            obs_fields = (bits, _MODEL_NAMES[code], sigma, base)
        else:
            raise ParseError(f"unknown section tag {tag}", start)
    if op is None:
        raise ParseError("missing OPERATOR section", r.pos)
    if obs_fields is None:
        raise ParseError("missing OBSERVATION section", r.pos)
    bits, model, sigma, base = obs_fields
    try:
        obs = OneBitObservation(bits, model, sigma, op.operator_id)
    except InvalidArgument as exc:
        raise ParseError(f"invalid observation: {exc}", base) from None
    if obs.m != op.rows:
        raise ParseError(f"observation has {obs.m} bits but operator has {op.rows} rows", base)
    if truth is not None and truth.size != op.cols:
        raise ParseError(f"truth has length {truth.size}, operator has {op.cols} columns", r.pos)
    return Problem(op, obs, truth, meta)


def save_problem(path, problem):
    with open(path, "wb") as fh:
        fh.write(encode_problem(problem))


def load_problem(path):
    with open(path, "rb") as fh:
        return decode_problem(fh.read())


def write_vector_csv(path, values, header=None):
    """One value per line; optional ``# key=value`` header lines."""
    with open(path, "w") as fh:
        for key, val in (header or {}).items():
            fh.write(f"# {key}={val}\n")
        for v in np.asarray(values).ravel():
            fh.write(f"{float(v)!r}\n")


def read_vector_csv(path):
    return np.atleast_1d(np.loadtxt(path, dtype=np.float64, comments="#"))
