"""Binary checkpoints of a :class:`~rtfe.scorers.StateVector`.

Layout, all little-endian::

    b"RTFE"  u32 version  u32 family  u32 d  u32 |V|  u32 |R|  u32 |T|
    u32 flags  i32 fitted_timestamp
    then for each matrix: u32 rows, u32 cols, rows*cols float32

Matrices come in :meth:`StateVector.parameters` order, followed by the
optimizer accumulators in the same order when flag bit 2 is set. Values
are narrowed to float32, so a read state differs from the written one only
by that rounding; writing it again reproduces the file byte for byte.
RotatE phases are reduced into ``[-pi, pi)`` on write.
"""
import struct

import numpy as np

from .scorers import FAMILIES, StateVector, wrap_phases

MAGIC = b"RTFE"
VERSION = 1
HEADER = struct.Struct("<4sIIIIIIIi")
SHAPE = struct.Struct("<II")

HAS_TIMESTAMP = 1
HAS_PARAMS = 2
HAS_OPTIMIZER = 4
FITTED_STATIC = -1
FITTED_NONE = -2

# largest float32 values inside [-pi, pi)
_PHASE_LO = np.nextafter(np.float32(-np.pi), np.float32(0))
_PHASE_HI = np.nextafter(np.float32(np.pi), np.float32(0))


def _encode_fitted(value):
    if value is None:
        return FITTED_NONE
    if value == "static":
        return FITTED_STATIC
    return int(value)


def _decode_fitted(code):
    return {FITTED_NONE: None, FITTED_STATIC: "static"}.get(code, code)


def _dim(state):
    if state.family == "DE-SimplE":
        return state.relation_features.shape[1] // 2
    if state.family == "RotatE":
        return state.relation_features.shape[1] * 2
    return state.relation_features.shape[1]


def to_bytes(state: StateVector) -> bytes:
    params = state.parameters()
    flags = (HAS_TIMESTAMP if state.timestamp_features is not None else 0)
    flags |= HAS_PARAMS if state.scorer_params else 0
    flags |= HAS_OPTIMIZER if state.optimizer_state is not None else 0
    chunks = [HEADER.pack(
        MAGIC, VERSION, FAMILIES.index(state.family), _dim(state), state.n_entities, state.n_relations,
        state.n_timestamps, flags, _encode_fitted(state.fitted_timestamp),
    )]
    mats = []
    for name, mat in params.items():
        if state.family == "RotatE" and name == "relation":
            mat = np.clip(wrap_phases(mat).astype("<f4"), _PHASE_LO, _PHASE_HI)
        mats.append(mat)
    if state.optimizer_state is not None:
        mats.extend(state.optimizer_state[name] for name in params)
    for mat in mats:
        chunks.append(SHAPE.pack(*mat.shape))
        chunks.append(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    return b"".join(chunks)


def from_bytes(data: bytes) -> StateVector:
    if len(data) < HEADER.size:
        raise ValueError("truncated checkpoint")
    magic, version, family, dim, nv, nr, nt, flags, fitted = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("not an RTFE checkpoint")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    family = FAMILIES[family]
    names = ["entity", "relation"]
    if flags & HAS_TIMESTAMP:
        names.append("timestamp")
    if flags & HAS_PARAMS:
        names += ["amplitude", "frequency", "phase"]
    offset = HEADER.size

    def read_matrix():
        nonlocal offset
        rows, cols = SHAPE.unpack_from(data, offset)
        offset += SHAPE.size
        size = rows * cols * 4
        if offset + size > len(data):
            raise ValueError("truncated checkpoint")
        mat = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset).reshape(rows, cols)
        offset += size
        return mat.astype(np.float64)

    mats = {name: read_matrix() for name in names}
    opt = {name: read_matrix() for name in names} if flags & HAS_OPTIMIZER else None
    if offset != len(data):
        raise ValueError("trailing bytes in checkpoint")
    if mats["entity"].shape[0] != nv or mats["relation"].shape[0] != nr:
        raise ValueError("header sizes disagree with matrix shapes")
    state = StateVector(
        family,
        mats.pop("entity"),
        mats.pop("relation"),
        mats.pop("timestamp", None),
        mats,
        opt,
        _decode_fitted(fitted),
        nt,
    )
    if _dim(state) != dim:
        raise ValueError("header dimension disagrees with matrix shapes")
    return state


def save(state: StateVector, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(state))


def load(path) -> StateVector:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
