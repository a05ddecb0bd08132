"""Physical model: interaction kernel, measurement, feedback and Hamiltonians."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import qmatrix as qm
from .errors import DimensionMismatch, NonUnitaryL, RangeError, TooLarge, ValidationError
from .graphon import SampledGraph, StepKernel

HOMODYNE = "homodyne"
COUNTING = "counting"


def _swap(d):
    S = np.zeros((d * d, d * d))
    for x in range(d):
        for y in range(d):
            S[y * d + x, x * d + y] = 1.0
    return S


@dataclass(frozen=True, eq=False)
class InteractionOperator:
    """Pair kernel ``a(x, y; x', y')`` stored with row ``(x, y)``, column ``(x', y')``."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=complex)
        D = M.shape[0]
        d = int(round(np.sqrt(D)))
        if M.ndim != 2 or M.shape[1] != D or d * d != D:
            raise DimensionMismatch(f"interaction matrix must be d^2 x d^2, got {M.shape}")
        if np.abs(M - qm.dagger(M)).max() > 1e-12:
            raise RangeError("interaction kernel must be Hermitian")
        S = _swap(d)
        if np.abs(S @ M @ S - M).max() > 1e-12:
            raise RangeError("interaction kernel must be exchange symmetric")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def d(self):
        return int(round(np.sqrt(self.matrix.shape[0])))

    @property
    def tensor(self):
        d = self.d
        return self.matrix.reshape(d, d, d, d)

    def hs_norm(self):
        return float(qm.frobenius_norm(self.matrix))


def exchange_operator_qubit():
    """``a^dagger x a + a x a^dagger``: one excitation hops between two qubits."""
    a = qm.ANNIHILATION
    return InteractionOperator(np.kron(qm.dagger(a), a) + np.kron(a, qm.dagger(a)))


def zero_interaction(d):
    return InteractionOperator(np.zeros((d * d, d * d), dtype=complex))


def mean_field_operator(A: InteractionOperator, rho):
    """Contract the second slot of the pair kernel against ``rho``.

    ``(A^rho)[x, x'] = sum_{y, y'} a(x, y; x', y') rho[y', y]``, i.e. the
    partial trace of ``A (I x rho)`` over the second factor. ``rho`` may be
    a stack ``(..., d, d)``.
    """
    rho = np.asarray(rho)
    if rho.shape[-1] != A.d or rho.shape[-2] != A.d:
        raise DimensionMismatch(f"state of size {rho.shape[-1]} vs interaction d = {A.d}")
    return np.einsum("xyab,...by->...xa", A.tensor, rho)


@dataclass(frozen=True, eq=False)
class MeasurementConfig:
    L: np.ndarray
    eta: float = 1.0
    detection: str = HOMODYNE

    def __post_init__(self):
        L = np.array(self.L, dtype=complex)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise DimensionMismatch(f"L must be square, got {L.shape}")
        if not 0.0 < self.eta <= 1.0:
            raise RangeError(f"eta = {self.eta} outside (0, 1]")
        if self.detection not in (HOMODYNE, COUNTING):
            raise RangeError(f"unknown detection {self.detection!r}")
        LLd = L @ qm.dagger(L)
        # the dissipator L rho L^dag - {L L^dag, rho}/2 only preserves trace for normal L
        if np.abs(LLd - qm.dagger(L) @ L).max() > 1e-10:
            raise RangeError("measurement operator L must be normal")
        if self.detection == COUNTING and np.abs(LLd - np.eye(L.shape[0])).max() > 1e-10:
            raise NonUnitaryL("counting detection requires a unitary L")
        L.setflags(write=False)
        object.__setattr__(self, "L", L)

    @property
    def is_unitary(self):
        return bool(np.abs(self.L @ qm.dagger(self.L) - np.eye(self.L.shape[0])).max() <= 1e-10)


def demo_control(gamma, target, U=10.0):
    """Feedback ``-8i tr([sigma_x, gamma] tau) + 5 (1 - tr(gamma tau))``, clipped to ``[-U, U]``.

    Vectorized over leading axes of ``gamma`` and ``target``.
    """
    gamma = np.asarray(gamma)
    target = np.asarray(target)
    comm = qm.commutator(qm.SIGMA_X, gamma)
    raw = -8j * np.einsum("...ab,...ba->...", comm, target) + 5.0 * (
        1.0 - np.einsum("...ab,...ba->...", gamma, target)
    )
    return np.clip(raw.real, -U, U)


@dataclass(frozen=True, eq=False)
class ControlLaw:
    """Scalar control multiplying the controlled Hamiltonian.

    ``kind`` is ``"none"``, ``"demo_feedback"`` (feedback towards a target
    state; with several targets, a particle at position ``u`` uses
    ``targets[floor(u * len(targets))]``) or ``"table"`` (open-loop
    piecewise-constant schedule ``values[i]`` on ``[times[i], times[i+1])``).
    """

    kind: str = "none"
    U: float = 10.0
    targets: tuple = ()
    times: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("none", "demo_feedback", "table"):
            raise RangeError(f"unknown control kind {self.kind!r}")
        if not self.U > 0:
            raise RangeError("control bound U must be positive")
        if self.kind == "demo_feedback" and not self.targets:
            raise RangeError("demo_feedback needs at least one target state")
        if self.kind == "table" and (len(self.times) != len(self.values) or not self.times):
            raise RangeError("table control needs matching nonempty times and values")
        object.__setattr__(self, "targets", tuple(np.array(t, dtype=complex) for t in self.targets))

    @property
    def active(self):
        return self.kind != "none"

    def target_at(self, u):
        k = len(self.targets)
        idx = np.clip(np.floor(np.asarray(u) * k).astype(int), 0, k - 1)
        return np.stack(self.targets)[idx]

    def __call__(self, gamma, t=0.0, u=0.5):
        """Control values for a stack of states at positions ``u`` (broadcast)."""
        gamma = np.asarray(gamma)
        shape = gamma.shape[:-2]
        if self.kind == "none":
            return np.zeros(shape)
        if self.kind == "table":
            i = np.searchsorted(np.asarray(self.times), t, side="right") - 1
            val = self.values[max(i, 0)]
            return np.full(shape, float(np.clip(val, -self.U, self.U)))
        u = np.broadcast_to(np.asarray(u, dtype=float), shape)
        return demo_control(gamma, self.target_at(u), self.U)


@dataclass(frozen=True, eq=False)
class ParticleModel:
    H_free: np.ndarray
    H_ctrl: np.ndarray
    A: InteractionOperator
    meas: MeasurementConfig
    control: ControlLaw = field(default_factory=ControlLaw)

    def __post_init__(self):
        Hf = np.array(self.H_free, dtype=complex)
        Hc = np.array(self.H_ctrl, dtype=complex)
        d = Hf.shape[0]
        for name, M in (("H_free", Hf), ("H_ctrl", Hc)):
            if M.shape != (d, d):
                raise DimensionMismatch(f"{name} has shape {M.shape}, expected ({d}, {d})")
            if np.abs(M - qm.dagger(M)).max() > 1e-12:
                raise RangeError(f"{name} must be Hermitian")
        if self.A.d != d or self.meas.L.shape != (d, d):
            raise DimensionMismatch("A and L must match the local dimension of H_free")
        for t in self.control.targets:
            if t.shape != (d, d):
                raise DimensionMismatch("control target has the wrong dimension")
        object.__setattr__(self, "H_free", Hf)
        object.__setattr__(self, "H_ctrl", Hc)

    @property
    def d(self):
        return self.H_free.shape[0]

    @property
    def L(self):
        return self.meas.L

    @property
    def eta(self):
        return self.meas.eta

    def replace(self, **changes):
        fields = dict(H_free=self.H_free, H_ctrl=self.H_ctrl, A=self.A, meas=self.meas, control=self.control)
        fields.update(changes)
        return ParticleModel(**fields)

    def to_json(self):
        ctrl = {"kind": self.control.kind, "U": self.control.U}
        if self.control.targets:
            ctrl["target"] = [qm.encode_matrix(t) for t in self.control.targets]
        if self.control.kind == "table":
            ctrl["times"] = list(self.control.times)
            ctrl["values"] = list(self.control.values)
        return {
            "d": self.d,
            "H_free": qm.encode_matrix(self.H_free),
            "H_ctrl": qm.encode_matrix(self.H_ctrl),
            "A": qm.encode_matrix(self.A.matrix),
            "L": qm.encode_matrix(self.L),
            "eta": self.eta,
            "detection": self.meas.detection,
            "control": ctrl,
        }

    def digest(self):
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _decode(value, path, errors, d=None, states=False):
    if isinstance(value, str):
        table = dict(qm.NAMED_MATRICES)
        table["exchange"] = exchange_operator_qubit().matrix
        if states:
            table.update(qm.NAMED_STATES)
        if value not in table:
            errors.append((path, f"unknown matrix name {value!r}"))
            return None
        return table[value]
    try:
        M = qm.decode_matrix(value)
    except (ValueError, TypeError) as exc:
        errors.append((path, f"not a matrix: {exc}"))
        return None
    if d is not None and M.shape != (d, d):
        errors.append((path, f"expected {d}x{d}, got {M.shape[0]}x{M.shape[1]}"))
        return None
    return M


def model_from_json(obj, path="model"):
    """Build a :class:`ParticleModel`, collecting every invalid field.

    Raises :class:`ValidationError` listing ``(field path, reason)`` pairs.
    """
    errors = []
    if not isinstance(obj, dict):
        raise ValidationError([(path, "must be an object")])
    d = obj.get("d", 2)
    if not isinstance(d, int) or d < 1:
        errors.append((f"{path}.d", "must be a positive integer"))
        d = 2
    Hf = _decode(obj.get("H_free", "sigma_z"), f"{path}.H_free", errors, d)
    Hc = _decode(obj.get("H_ctrl", "sigma_x"), f"{path}.H_ctrl", errors, d)
    Am = _decode(obj.get("A", "exchange"), f"{path}.A", errors, d * d)
    L = _decode(obj.get("L", "sigma_z"), f"{path}.L", errors, d)
    eta = obj.get("eta", 1.0)
    if not isinstance(eta, (int, float)) or not 0.0 < eta <= 1.0:
        errors.append((f"{path}.meas.eta", f"must lie in (0, 1], got {eta!r}"))
    detection = obj.get("detection", HOMODYNE)
    if detection not in (HOMODYNE, COUNTING):
        errors.append((f"{path}.detection", f"must be {HOMODYNE!r} or {COUNTING!r}"))
    cobj = obj.get("control", {"kind": "none"})
    if isinstance(cobj, str):
        cobj = {"kind": cobj}
    kind = cobj.get("kind", "none")
    U = cobj.get("U", 10.0)
    if kind not in ("none", "demo_feedback", "table"):
        errors.append((f"{path}.control.kind", f"unknown kind {kind!r}"))
    if not isinstance(U, (int, float)) or U <= 0:
        errors.append((f"{path}.control.U", "must be a positive number"))
    targets = []
    raw_t = cobj.get("target", cobj.get("targets", []))
    if isinstance(raw_t, str) or _is_single_matrix(raw_t):
        raw_t = [raw_t]
    for i, t in enumerate(raw_t):
        M = _decode(t, f"{path}.control.target[{i}]", errors, d, states=True)
        if M is not None:
            targets.append(M)
    if kind == "demo_feedback" and not raw_t:
        errors.append((f"{path}.control.target", "required for demo_feedback"))
    if errors:
        raise ValidationError(errors)
    try:
        A = InteractionOperator(Am)
    except (RangeError, DimensionMismatch) as exc:
        errors.append((f"{path}.A", str(exc)))
    try:
        meas = MeasurementConfig(L, float(eta), detection)
    except (RangeError, DimensionMismatch, NonUnitaryL) as exc:
        errors.append((f"{path}.L", str(exc)))
    if errors:
        raise ValidationError(errors)
    try:
        control = ControlLaw(kind, float(U), tuple(targets), tuple(cobj.get("times", ())), tuple(cobj.get("values", ())))
        return ParticleModel(Hf, Hc, A, meas, control)
    except (RangeError, DimensionMismatch) as exc:
        raise ValidationError([(path, str(exc))]) from None


def _is_single_matrix(obj):
    # a single encoded matrix is a list of rows whose entries are numbers or [re, im]
    if not obj:
        return False
    try:
        arr = np.asarray(obj, dtype=float)
    except (ValueError, TypeError):
        return False
    return arr.ndim == 2 or (arr.ndim == 3 and arr.shape[-1] == 2 and arr.shape[0] == arr.shape[1])


def demo_model(feedback=True, U=10.0, detection=HOMODYNE, interaction=True):
    """Two-class qubit preset: ``H~ = sigma_z``, ``H^ = sigma_x``, ``L = sigma_z``, exchange ``A``, eta = 1.

    With feedback, class 0 (``u < 1/2``) is steered to ``|0><0|`` and class 1
    to ``|1><1|``.
    """
    control = ControlLaw("none", U)
    if feedback:
        control = ControlLaw("demo_feedback", U, (qm.NAMED_STATES["proj0"], qm.NAMED_STATES["proj1"]))
    A = exchange_operator_qubit() if interaction else zero_interaction(2)
    return ParticleModel(qm.SIGMA_Z, qm.SIGMA_X, A, MeasurementConfig(qm.SIGMA_Z, 1.0, detection), control)


def assemble_N_hamiltonian(model: ParticleModel, g: SampledGraph, controls=None, interaction_scale=1.0):
    """Register Hamiltonian ``(1/N) sum_{p>q} xi_pq A_pq + sum_q (H~ + u_q H^)_q``.

    ``interaction_scale`` multiplies the pair term (1 reproduces the
    formula as written).
    """
    N = g.N
    d = model.d
    if d**N > qm.MAX_DIM:
        raise TooLarge(f"d^N = {d**N} exceeds {qm.MAX_DIM}")
    if controls is None:
        controls = np.zeros(N)
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (N,):
        raise DimensionMismatch(f"expected {N} controls, got shape {controls.shape}")
    H = np.zeros((d**N, d**N), dtype=complex)
    for q in range(1, N + 1):
        H += qm.embed_single(model.H_free + controls[q - 1] * model.H_ctrl, q, N)
    if np.any(model.A.matrix):
        scale = interaction_scale / N
        for q in range(1, N + 1):
            for p in range(q + 1, N + 1):
                xi = g.adjacency[p - 1, q - 1]
                if xi != 0.0:
                    H += scale * xi * qm.embed_pair(model.A.matrix, p, q, N)
    return qm.hermitize(H)


def interaction_fields(A: InteractionOperator, W: StepKernel, means):
    """``(1/n) sum_v w[u, v] A^{means[v]}`` for every cell ``u``; means shape ``(..., n, d, d)``."""
    means = np.asarray(means)
    if means.shape[-3] != W.n:
        raise DimensionMismatch(f"{means.shape[-3]} cell states for a {W.n}-block kernel")
    mf = mean_field_operator(A, means)
    return np.einsum("uv,...vab->...uab", W.weights, mf) / W.n


def effective_limit_hamiltonian(model: ParticleModel, W: StepKernel, u_cell, means, control=0.0):
    """``H~ + control H^ + (1/n) sum_v w[u_cell, v] A^{means[v]}``."""
    means = np.asarray(means)
    if means.shape[0] != W.n:
        raise DimensionMismatch(f"{means.shape[0]} cell states for a {W.n}-block kernel")
    field_ = np.einsum("v,vab->ab", W.weights[u_cell], mean_field_operator(model.A, means)) / W.n
    return qm.hermitize(model.H_free + control * model.H_ctrl + field_)
