"""AC power flow, DC linearization, PTDF/LODF and post-outage flow prediction.

The AC model is the standard pi-branch one (series impedance, line
charging, off-nominal taps, bus shunts) so the solved baseline matches
the distributed test systems. The DC model uses flat 1.0 pu voltage and
branch susceptance 1/(x*tap). FlowSolution values are in MVA on the
system base; internal computations are per-unit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network, UnknownBranchError, is_islanding

__all__ = [
    "StateVector",
    "FlowSolution",
    "LodfMatrix",
    "PowerFlowError",
    "solve_ac",
    "line_flow",
    "branch_flows",
    "dc_flows",
    "ptdf",
    "lodf",
    "post_outage_flows",
    "flows_to_csv",
]

# threshold on |1 - PTDF_nn| below which an outage column is deemed islanding
_ISLANDING_TOL = 1e-6


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class StateVector:
    magnitudes: np.ndarray   # per-bus V, pu
    phases: np.ndarray       # per-bus theta, rad; reference phase == 0

    def voltages(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.phases)


@dataclass(frozen=True)
class FlowSolution:
    from_flows: np.ndarray   # per-branch complex MVA entering at the from end
    to_flows: np.ndarray     # per-branch complex MVA entering at the to end
    losses: np.ndarray       # per-branch complex MVA, == from + to

    @property
    def real_from_mw(self) -> np.ndarray:
        return self.from_flows.real


@dataclass(frozen=True)
class LodfMatrix:
    entries: np.ndarray          # n_br x n_br, NaN in undefined columns
    undefined_columns: frozenset  # islanding branch ids

    def column(self, branch_id: int) -> np.ndarray:
        return self.entries[:, branch_id - 1]


def _branch_admittances(br) -> tuple[complex, complex, complex, complex]:
    """Two-port (Yff, Yft, Ytf, Ytt) of a pi-branch with tap on the from side."""
    y = br.admittance
    bc = 1j * br.charging / 2.0
    t = br.tap
    return (y + bc) / t**2, -y / t, -y / t, y + bc


def admittance_matrix(net: Network) -> np.ndarray:
    n = net.n_b
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        yff, yft, ytf, ytt = _branch_admittances(br)
        f, t = br.from_bus - 1, br.to_bus - 1
        Y[f, f] += yff
        Y[t, t] += ytt
        Y[f, t] += yft
        Y[t, f] += ytf
    for b in net.buses:
        Y[b.id - 1, b.id - 1] += b.shunt
    return Y


def _scheduled_injections(net: Network) -> np.ndarray:
    return np.array([b.generation - b.load for b in net.buses])


def solve_ac(net: Network, tol: float = 1e-8, max_iter: int = 50
             ) -> tuple[StateVector, FlowSolution]:
    """Newton-Raphson AC power flow from a flat start.

    Converges when every non-slack bus power mismatch is below tol (pu).
    PV buses hold V at the generator setpoint, the slack bus holds V and
    a zero phase.
    """
    n = net.n_b
    Y = admittance_matrix(net)
    G, B = Y.real, Y.imag
    s_sched = _scheduled_injections(net)

    slack = net.reference_bus - 1
    pv = [b.id - 1 for b in net.buses if b.kind == "PV"]
    pq = [b.id - 1 for b in net.buses if b.kind == "PQ"]
    ang_idx = sorted(pv + pq)          # unknown phases
    mag_idx = sorted(pq)               # unknown magnitudes

    V = np.ones(n)
    for b in net.buses:
        if b.kind in ("PV", "slack"):
            V[b.id - 1] = b.voltage_setpoint
    theta = np.zeros(n)

    def injections(V, theta):
        v = V * np.exp(1j * theta)
        return v * np.conj(Y @ v)

    for _ in range(max_iter):
        s = injections(V, theta)
        mis_p = s_sched.real[ang_idx] - s.real[ang_idx]
        mis_q = s_sched.imag[mag_idx] - s.imag[mag_idx]
        if max(np.abs(mis_p).max(initial=0), np.abs(mis_q).max(initial=0)) < tol:
            state = StateVector(V.copy(), theta - theta[slack])
            return state, branch_flows(net, state)

        # polar-form Jacobian blocks
        dtheta = theta[:, None] - theta[None, :]
        ct, st = np.cos(dtheta), np.sin(dtheta)
        P, Q = s.real, s.imag
        VV = V[:, None] * V[None, :]
        H = VV * (G * st - B * ct)           # dP/dtheta off-diagonal
        np.fill_diagonal(H, -Q - B.diagonal() * V**2)
        N = V[:, None] * (G * ct + B * st)   # dP/dV off-diagonal
        np.fill_diagonal(N, P / V + G.diagonal() * V)
        J = VV * (-G * ct - B * st)          # dQ/dtheta off-diagonal
        np.fill_diagonal(J, P - G.diagonal() * V**2)
        L = V[:, None] * (G * st - B * ct)   # dQ/dV off-diagonal
        np.fill_diagonal(L, Q / V - B.diagonal() * V)

        top = np.hstack([H[np.ix_(ang_idx, ang_idx)], N[np.ix_(ang_idx, mag_idx)]])
        bot = np.hstack([J[np.ix_(mag_idx, ang_idx)], L[np.ix_(mag_idx, mag_idx)]])
        jac = np.vstack([top, bot])
        rhs = np.concatenate([mis_p, mis_q])
        try:
            dx = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Jacobian: {exc}") from None

        theta[ang_idx] += dx[: len(ang_idx)]
        V[mag_idx] += dx[len(ang_idx):]

    raise PowerFlowError(f"no convergence after {max_iter} iterations")


def line_flow(net: Network, state: StateVector, branch_id: int) -> complex:
    """Series-branch from-end flow S = Y* |v_j|^2 - Y* v_j v_k*, MVA.

    This is the attack-side primitive; it coincides with the full-model
    flow on branches without charging or an off-nominal tap.
    """
    br = net.branch(branch_id)
    v = state.voltages()
    vj, vk = v[br.from_bus - 1], v[br.to_bus - 1]
    y = np.conj(br.admittance)
    return (y * abs(vj) ** 2 - y * vj * np.conj(vk)) * net.base_mva


def branch_flows(net: Network, state: StateVector) -> FlowSolution:
    """Full-model per-branch flows, in branch-list order."""
    v = state.voltages()
    nf = np.empty(net.n_br, dtype=complex)
    nt = np.empty(net.n_br, dtype=complex)
    for i, br in enumerate(net.branches):
        vj, vk = v[br.from_bus - 1], v[br.to_bus - 1]
        yff, yft, ytf, ytt = _branch_admittances(br)
        nf[i] = vj * np.conj(yff * vj + yft * vk)
        nt[i] = vk * np.conj(ytf * vj + ytt * vk)
    nf *= net.base_mva
    nt *= net.base_mva
    return FlowSolution(nf, nt, nf + nt)


def _susceptance_matrices(net: Network):
    """Reduced nodal susceptance and branch susceptance incidence (DC)."""
    n, m = net.n_b, net.n_br
    A = np.zeros((m, n))
    b_series = np.empty(m)
    for i, br in enumerate(net.branches):
        A[i, br.from_bus - 1] = 1.0
        A[i, br.to_bus - 1] = -1.0
        b_series[i] = 1.0 / (br.impedance.imag * br.tap)
    Bf = b_series[:, None] * A                       # branch flows = Bf @ theta
    Bbus = A.T @ Bf
    return A, Bf, Bbus


def dc_flows(net: Network) -> np.ndarray:
    """DC real power flows (MW) for the scheduled injections."""
    slack = net.reference_bus - 1
    keep = [i for i in range(net.n_b) if i != slack]
    _, Bf, Bbus = _susceptance_matrices(net)
    p_inj = _scheduled_injections(net).real
    theta = np.zeros(net.n_b)
    try:
        theta[keep] = np.linalg.solve(Bbus[np.ix_(keep, keep)], p_inj[keep])
    except np.linalg.LinAlgError as exc:
        raise PowerFlowError(f"singular susceptance matrix: {exc}") from None
    return Bf @ theta * net.base_mva


def ptdf(net: Network) -> np.ndarray:
    """n_br x n_br matrix: sensitivity of line m's DC flow to moving one
    unit of power across line n's terminals (from -> to)."""
    slack = net.reference_bus - 1
    keep = [i for i in range(net.n_b) if i != slack]
    _, Bf, Bbus = _susceptance_matrices(net)
    try:
        inv_red = np.linalg.inv(Bbus[np.ix_(keep, keep)])
    except np.linalg.LinAlgError as exc:
        raise PowerFlowError(f"singular susceptance matrix: {exc}") from None
    isf = np.zeros((net.n_br, net.n_b))              # injection shift factors
    isf[:, keep] = Bf[:, keep] @ inv_red
    cols_f = np.array([br.from_bus - 1 for br in net.branches])
    cols_t = np.array([br.to_bus - 1 for br in net.branches])
    return isf[:, cols_f] - isf[:, cols_t]


def lodf(net: Network) -> LodfMatrix:
    """Line outage distribution factors; islanding columns are NaN."""
    P = ptdf(net)
    m = net.n_br
    L = np.empty((m, m))
    undefined = set()
    for n in range(m):
        denom = 1.0 - P[n, n]
        if abs(denom) < _ISLANDING_TOL:
            L[:, n] = np.nan
            undefined.add(n + 1)
        else:
            L[:, n] = P[:, n] / denom
            L[n, n] = -1.0
    return LodfMatrix(L, frozenset(undefined))


def post_outage_flows(p: np.ndarray, lodf_matrix: LodfMatrix, branch_id: int
                      ) -> np.ndarray:
    """Predicted per-branch MW after removing one branch: p + P_n * L[:, n]."""
    if branch_id in lodf_matrix.undefined_columns:
        raise ValueError(f"branch {branch_id} islands the network; "
                         "LODF column undefined")
    if not 1 <= branch_id <= lodf_matrix.entries.shape[0]:
        raise UnknownBranchError(branch_id)
    p = np.asarray(p, dtype=float)
    out = p + p[branch_id - 1] * lodf_matrix.entries[:, branch_id - 1]
    out[branch_id - 1] = 0.0
    return out


def flows_to_csv(net: Network, flows: FlowSolution) -> str:
    """CSV dump (--dump-flows): branch id, P/Q at both ends, loss."""
    lines = ["branch,P_from,Q_from,P_to,Q_to,loss_mw"]
    for i, br in enumerate(net.branches):
        sf, st, ls = flows.from_flows[i], flows.to_flows[i], flows.losses[i]
        lines.append(f"{br.id},{sf.real:.6f},{sf.imag:.6f},"
                     f"{st.real:.6f},{st.imag:.6f},{ls.real:.6f}")
    return "\n".join(lines) + "\n"


def solve_outage(net: Network, branch_id: int, tol: float = 1e-8
                 ) -> tuple[StateVector, FlowSolution]:
    """AC re-solve with one branch out; errors if the outage islands."""
    if is_islanding(net, branch_id):
        raise PowerFlowError(f"branch {branch_id} outage islands the network")
    reduced = net.without_branch(branch_id)
    return solve_ac(reduced, tol=tol)
