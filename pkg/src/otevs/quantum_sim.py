"""Statevector simulation of the latent-embedding and variational circuits.

Qubit 0 is the most significant bit of the amplitude index, so the
amplitude of ``|q0 q1 ... q_{n-1}>`` sits at ``int("q0q1...", 2)``. Rotations
follow ``R_A(phi) = exp(-i phi A / 2)``.

Two paths share one circuit description:

* :func:`build_circuit` / :func:`apply_gate` / :func:`prepare_state` work on a
  single :class:`StateVector` and are the readable reference.
* :func:`prepare_states` runs the same gate template on a whole batch of
  latent vectors (and optionally per-row angle vectors) at once. Training
  and the parameter-shift rule go through this path.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Ansatz(str, enum.Enum):
    SEQUENTIAL = "sequential"
    BRICKWORK = "brickwork"
    ILLUSTRATIVE = "illustrative"
    # RY(z_j + theta_j) on each qubit; the two-qubit toy model used to compare
    # fixed and tunable observables analytically.
    PRODUCT_RY = "product_ry"


class GateKind(str, enum.Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    CZ = "CZ"


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    qubits: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        n_expected = 2 if self.kind is GateKind.CZ else 1
        if len(self.qubits) != n_expected:
            raise ValueError(f"{self.kind.value} acts on {n_expected} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"repeated qubit index in {self.qubits}")
        if self.kind is not GateKind.CZ and self.angle is None:
            raise ValueError(f"{self.kind.value} needs an angle")


@dataclass
class StateVector:
    n: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2**self.n,):
            raise ValueError(f"expected {2**self.n} amplitudes, got shape {self.amplitudes.shape}")

    @classmethod
    def zero(cls, n: int) -> "StateVector":
        amps = np.zeros(2**n, dtype=complex)
        amps[0] = 1.0
        return cls(n, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def fidelity(self, other: "StateVector") -> float:
        return float(abs(np.vdot(self.amplitudes, other.amplitudes)) ** 2)


@dataclass(frozen=True)
class CircuitSpec:
    n: int
    ansatz: Ansatz = Ansatz.SEQUENTIAL
    layers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "ansatz", Ansatz(self.ansatz))
        if self.n < 1:
            raise ValueError("need at least one qubit")
        if self.layers < 1:
            raise ValueError("need at least one layer")

    @property
    def latent_dim(self) -> int:
        if self.ansatz is Ansatz.PRODUCT_RY:
            return self.n
        return 2

    @property
    def angles_per_layer(self) -> int:
        if self.ansatz is Ansatz.PRODUCT_RY:
            return self.n
        return 2 * self.n

    @property
    def param_count(self) -> int:
        return self.layers * self.angles_per_layer

    def to_dict(self) -> dict:
        return {"n": self.n, "ansatz": self.ansatz.value, "layers": self.layers}

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitSpec":
        return cls(n=int(d["n"]), ansatz=Ansatz(d["ansatz"]), layers=int(d["layers"]))


# One template entry: (kind, qubits, source, index). ``source`` is "theta",
# "z" or None (CZ); ``index`` points into the corresponding angle vector.
_TemplateOp = tuple[GateKind, tuple[int, ...], "str | None", int]


def _rotation_layer(n: int, offset: int) -> list[_TemplateOp]:
    ops: list[_TemplateOp] = []
    for q in range(n):
        ops.append((GateKind.RY, (q,), "theta", offset + q))
    for q in range(n):
        ops.append((GateKind.RZ, (q,), "theta", offset + n + q))
    return ops


def _cz_chain(n: int) -> list[_TemplateOp]:
    return [(GateKind.CZ, (q, q + 1), None, 0) for q in range(n - 1)]


def _cz_brick(n: int) -> list[_TemplateOp]:
    even = [(GateKind.CZ, (q, q + 1), None, 0) for q in range(0, n - 1, 2)]
    odd = [(GateKind.CZ, (q, q + 1), None, 0) for q in range(1, n - 1, 2)]
    return even + odd


def circuit_template(spec: CircuitSpec) -> list[_TemplateOp]:
    """Gate sequence of ``spec`` with angles left symbolic."""
    n = spec.n
    per = spec.angles_per_layer
    ops: list[_TemplateOp] = []
    if spec.ansatz is Ansatz.SEQUENTIAL:
        ops += [(GateKind.RX, (q,), "z", 0) for q in range(n)]
        ops += [(GateKind.RZ, (q,), "z", 1) for q in range(n)]
        for layer in range(spec.layers):
            ops += _rotation_layer(n, layer * per) + _cz_chain(n)
    elif spec.ansatz is Ansatz.BRICKWORK:
        # z_1 on qubits 1, 3, 5, ... and z_2 on 2, 4, ... in one-based counting
        ops += [(GateKind.RX, (q,), "z", 0) for q in range(0, n, 2)]
        ops += [(GateKind.RX, (q,), "z", 1) for q in range(1, n, 2)]
        for layer in range(spec.layers):
            ops += _rotation_layer(n, layer * per) + _cz_brick(n)
    elif spec.ansatz is Ansatz.ILLUSTRATIVE:
        # embedding of z_1, layer, embedding of z_2, layer, ... alternating
        for layer in range(spec.layers):
            ops += [(GateKind.RX, (q,), "z", layer % 2) for q in range(n)]
            ops += _rotation_layer(n, layer * per) + _cz_chain(n)
    elif spec.ansatz is Ansatz.PRODUCT_RY:
        ops += [(GateKind.RY, (q,), "z", q) for q in range(n)]
        for layer in range(spec.layers):
            ops += [(GateKind.RY, (q,), "theta", layer * per + q) for q in range(n)]
    else:  # pragma: no cover
        raise ValueError(spec.ansatz)
    return ops


def _check_dims(spec: CircuitSpec, theta: np.ndarray, z: np.ndarray) -> None:
    if theta.shape[-1] != spec.param_count:
        raise ValueError(f"theta has {theta.shape[-1]} entries, circuit needs {spec.param_count}")
    if z.shape[-1] != spec.latent_dim:
        raise ValueError(f"z has {z.shape[-1]} entries, circuit needs {spec.latent_dim}")


def build_circuit(spec: CircuitSpec, theta: Sequence[float], z: Sequence[float]) -> list[Gate]:
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    if theta.ndim != 1 or z.ndim != 1:
        raise ValueError("build_circuit takes flat theta and z vectors")
    _check_dims(spec, theta, z)
    gates = []
    for kind, qubits, source, idx in circuit_template(spec):
        if source is None:
            gates.append(Gate(kind, qubits))
        else:
            angle = theta[idx] if source == "theta" else z[idx]
            gates.append(Gate(kind, qubits, float(angle)))
    return gates


def _single_qubit_matrix(kind: GateKind, angle):
    """2x2 rotation matrix; ``angle`` may be an array, giving shape (..., 2, 2)."""
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle / 2)
    s = np.sin(angle / 2)
    out = np.empty(angle.shape + (2, 2), dtype=complex)
    if kind is GateKind.RX:
        out[..., 0, 0] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
        out[..., 1, 1] = c
    elif kind is GateKind.RY:
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
    elif kind is GateKind.RZ:
        out[..., 0, 0] = np.exp(-0.5j * angle)
        out[..., 0, 1] = 0.0
        out[..., 1, 0] = 0.0
        out[..., 1, 1] = np.exp(0.5j * angle)
    else:
        raise ValueError(f"{kind} is not a single-qubit rotation")
    return out


def apply_single_qubit(psi: np.ndarray, n: int, q: int, mat: np.ndarray) -> np.ndarray:
    """Apply a 2x2 matrix to qubit ``q`` of a batch of states.

    ``psi`` has shape (batch, 2**n); ``mat`` is (2, 2) or (batch, 2, 2).
    """
    batch = psi.shape[0]
    v = psi.reshape(batch, 2**q, 2, 2 ** (n - q - 1))
    a0 = v[:, :, 0, :]
    a1 = v[:, :, 1, :]
    if mat.ndim == 2:
        m00, m01, m10, m11 = mat[0, 0], mat[0, 1], mat[1, 0], mat[1, 1]
    else:
        m00, m01, m10, m11 = (mat[:, i, j, None, None] for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
    out = np.empty_like(v)
    out[:, :, 0, :] = m00 * a0 + m01 * a1
    out[:, :, 1, :] = m10 * a0 + m11 * a1
    return out.reshape(batch, 2**n)


def _cz_signs(n: int, q1: int, q2: int) -> np.ndarray:
    idx = np.arange(2**n)
    b1 = (idx >> (n - 1 - q1)) & 1
    b2 = (idx >> (n - 1 - q2)) & 1
    return np.where(b1 & b2, -1.0, 1.0)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    n = state.n
    if any(q < 0 or q >= n for q in gate.qubits):
        raise IndexError(f"gate qubits {gate.qubits} out of range for {n} qubits")
    psi = state.amplitudes[None, :]
    if gate.kind is GateKind.CZ:
        out = psi * _cz_signs(n, *gate.qubits)
    else:
        out = apply_single_qubit(psi, n, gate.qubits[0], _single_qubit_matrix(gate.kind, gate.angle))
    return StateVector(n, out[0])


def prepare_state(spec: CircuitSpec, theta: Sequence[float], z: Sequence[float]) -> StateVector:
    state = StateVector.zero(spec.n)
    for gate in build_circuit(spec, theta, z):
        state = apply_gate(state, gate)
    return state


def prepare_states(spec: CircuitSpec, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Batched state preparation.

    Parameters
    ----------
    theta : array, shape (N_d,) or (batch, N_d)
        Circuit angles, shared across the batch or given per row.
    z : array, shape (batch, K)
        Latent vectors.

    Returns
    -------
    array, shape (batch, 2**n), complex amplitudes.
    """
    theta = np.asarray(theta, dtype=float)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    _check_dims(spec, theta, z)
    batch = z.shape[0]
    if theta.ndim == 2 and theta.shape[0] != batch:
        raise ValueError("per-row theta must match the latent batch size")
    n = spec.n
    psi = np.zeros((batch, 2**n), dtype=complex)
    psi[:, 0] = 1.0
    cz_cache: dict[tuple[int, ...], np.ndarray] = {}
    for kind, qubits, source, idx in circuit_template(spec):
        if kind is GateKind.CZ:
            if qubits not in cz_cache:
                cz_cache[qubits] = _cz_signs(n, *qubits)
            psi = psi * cz_cache[qubits]
            continue
        if source == "theta":
            angle = theta[..., idx]
        else:
            angle = z[:, idx]
        mat = _single_qubit_matrix(kind, angle)
        psi = apply_single_qubit(psi, n, qubits[0], mat)
    return psi
