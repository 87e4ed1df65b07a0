"""
Chemistry and mass-balance right-hand side of the countercurrent mixer-settler cascade.

Aqueous phase flows from stage 16 (scrub acid inlet) down to stage 1 (raffinate), the
organic phase from stage 1 (fresh solvent) up to stage 16 (loaded solvent). The feed
enters the stage-8 mixer. Every function here is pure over numpy arrays; nothing is
cached, so the module is safe to call from any number of workers.

State layout of x (stage index fastest):
    U_aq_M | U_og_M | U_aq_D | U_og_D | H_aq_M | H_og_M | H_aq_D | H_og_D
and of x_alg:
    U_star | H_star
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from utils.config import PlantParams
from utils.constants import N_BLOCKS
from utils.errors import DomainError


@dataclass(frozen=True)
class StageFlows:
    """
    Flows and quasi-static mixer phase volumes for one (u, q) pair.

    A and O are both the inlet and the outlet flow of each mixer (no leakage).
    """

    u: float
    q: float
    A: np.ndarray
    O: np.ndarray
    V_mix: np.ndarray
    W_mix: np.ndarray
    feed_stage: int
    U_aq_F: float
    H_aq_F: float
    A_E: float
    H_aq_E: float

    @property
    def n_stages(self) -> int:
        return len(self.A)

    def inlet_concentrations(self, x: np.ndarray) -> np.ndarray:
        """
        Mixer inlet concentrations for the current settler contents.

        Returns:
            np.ndarray: shape (4, n_stages), rows U_aq_in, U_og_in, H_aq_in, H_og_in.
        """
        n = self.n_stages
        blocks = x.reshape(N_BLOCKS, n)
        U_aq_D, U_og_D, H_aq_D, H_og_D = blocks[2], blocks[3], blocks[6], blocks[7]
        f = self.feed_stage - 1
        inlets = np.zeros((4, n))

        # aqueous comes down from the settler above; stage 16 gets scrub acid
        inlets[0, :-1] = U_aq_D[1:]
        inlets[2, :-1] = H_aq_D[1:]
        inlets[2, -1] = self.H_aq_E

        # the feed mixes with the stage-9 settler aqueous before entering stage 8
        total = self.u + self.A_E
        inlets[0, f] = (self.u * self.U_aq_F + self.A_E * U_aq_D[f + 1]) / total
        inlets[2, f] = (self.u * self.H_aq_F + self.A_E * H_aq_D[f + 1]) / total

        # organic comes up from the settler below; stage 1 gets fresh solvent
        inlets[1, 1:] = U_og_D[:-1]
        inlets[3, 1:] = H_og_D[:-1]
        return inlets


def wire_flows(params: PlantParams, u: float, q: float) -> StageFlows:
    """
    Builds the stage flow network for feed flow u and fresh solvent flow q.

    Args:
        params (PlantParams): Plant parameters.
        u (float): Feed flow A_F in L/h.
        q (float): Fresh solvent flow O_E in L/h.

    Returns:
        StageFlows: Per-stage flows and mixer phase volumes.

    Raises:
        DomainError: If u or q is not strictly positive.
    """
    if not (u > 0 and q > 0) or not (np.isfinite(u) and np.isfinite(q)):
        raise DomainError(f"Flows must be strictly positive, got u={u}, q={q}")

    n = params.n_stages
    A = np.full(n, params.A_E, dtype=float)
    A[: params.feed_stage] += u
    O = np.full(n, q, dtype=float)

    # perfect mixing: the phase split follows the inlet flow ratio
    V_mix = params.V_mix_total * A / (A + O)
    W_mix = params.V_mix_total * O / (A + O)

    return StageFlows(
        u=float(u),
        q=float(q),
        A=A,
        O=O,
        V_mix=V_mix,
        W_mix=W_mix,
        feed_stage=params.feed_stage,
        U_aq_F=params.U_aq_F,
        H_aq_F=params.H_aq_F,
        A_E=params.A_E,
        H_aq_E=params.H_aq_E,
    )


def _tbp_free(U_star, H_star, K_U: float, K_H: float, TBP_total: float):
    nitrate = 2.0 * U_star + H_star
    a = 2.0 * K_U * U_star * nitrate**2
    b = 1.0 + K_H * H_star * nitrate
    return 2.0 * TBP_total / (b + np.sqrt(b * b + 4.0 * a * TBP_total))


def tbp_free(U_star, H_star, params: PlantParams):
    """
    Free (uncomplexed) TBP at the interface, from the TBP balance closed form.

    Args:
        U_star: Interface aqueous uranium, scalar or array (mol/L).
        H_star: Interface aqueous acid, same shape (mol/L).
        params (PlantParams): Provides K_U, K_H and TBP_total.

    Returns:
        Free TBP in (0, TBP_total].
    """
    U_star = np.asarray(U_star, dtype=float)
    H_star = np.asarray(H_star, dtype=float)
    if np.any(U_star < 0) or np.any(H_star < 0):
        raise DomainError("Interface concentrations must be non-negative")
    result = _tbp_free(U_star, H_star, params.K_U, params.K_H, params.TBP_total)
    return float(result) if result.ndim == 0 else result


def _residual_and_jacobian(U_aq_M, U_og_M, H_aq_M, H_og_M, U_star, H_star, K_U, K_H, TBP_total):
    """
    Interface residuals (g_U, g_H) and their 2x2 derivatives per stage, vectorized.
    """
    nitrate = 2.0 * U_star + H_star
    a = 2.0 * K_U * U_star * nitrate**2
    b = 1.0 + K_H * H_star * nitrate
    root = np.sqrt(b * b + 4.0 * a * TBP_total)
    free = 2.0 * TBP_total / (b + root)

    U_og_i = 0.5 * U_aq_M + U_og_M - 0.5 * U_star
    H_og_i = 0.5 * H_aq_M + H_og_M - 0.5 * H_star
    g_U = U_og_i - K_U * U_star * nitrate**2 * free**2
    g_H = H_og_i - K_H * H_star * nitrate * free

    # implicit derivative of free TBP from a F^2 + b F - c = 0
    da_dU = 2.0 * K_U * (nitrate**2 + 4.0 * U_star * nitrate)
    da_dH = 4.0 * K_U * U_star * nitrate
    db_dU = 2.0 * K_H * H_star
    db_dH = K_H * (nitrate + H_star)
    denom = 2.0 * a * free + b
    dF_dU = -(free**2 * da_dU + free * db_dU) / denom
    dF_dH = -(free**2 * da_dH + free * db_dH) / denom

    j11 = -0.5 - K_U * ((nitrate**2 + 4.0 * U_star * nitrate) * free**2 + 2.0 * U_star * nitrate**2 * free * dF_dU)
    j12 = -K_U * (2.0 * U_star * nitrate * free**2 + 2.0 * U_star * nitrate**2 * free * dF_dH)
    j21 = -K_H * (2.0 * H_star * free + H_star * nitrate * dF_dU)
    j22 = -0.5 - K_H * ((nitrate + H_star) * free + H_star * nitrate * dF_dH)
    return g_U, g_H, j11, j12, j21, j22


def interface_equilibrium_residual(
    stage_conc: Dict[str, np.ndarray], guess: Tuple[np.ndarray, np.ndarray], params: PlantParams
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Algebraic residuals of the interface equilibrium at one or many stages.

    Args:
        stage_conc (dict): "U_aq_M", "U_og_M", "H_aq_M", "H_og_M" (scalars or arrays).
        guess (tuple): (U_star, H_star) at which to evaluate.
        params (PlantParams): Equilibrium constants and TBP total.

    Returns:
        tuple: (g_U, g_H). Both vanish at the interface equilibrium.
    """
    values = [np.asarray(stage_conc[key], dtype=float) for key in ("U_aq_M", "U_og_M", "H_aq_M", "H_og_M")]
    U_star, H_star = (np.asarray(v, dtype=float) for v in guess)
    for arr in (*values, U_star, H_star):
        if np.any(arr < 0):
            raise DomainError("Concentrations must be non-negative")
    g_U, g_H, *_ = _residual_and_jacobian(*values, U_star, H_star, params.K_U, params.K_H, params.TBP_total)
    if g_U.ndim == 0:
        return float(g_U), float(g_H)
    return g_U, g_H


def mass_balance_rhs(x: np.ndarray, x_alg: np.ndarray, flows: StageFlows, params: PlantParams) -> np.ndarray:
    """
    Time derivatives of the 128 differential states (mol/L/h).

    Args:
        x (np.ndarray): Differential state, length 8 * n_stages.
        x_alg (np.ndarray): Interface concentrations (U_star, H_star) solving the algebraic residuals.
        flows (StageFlows): Flow network for the current inputs.
        params (PlantParams): Plant parameters.

    Returns:
        np.ndarray: dx/dt in the same layout as x.
    """
    if np.any(flows.V_mix <= 0) or np.any(flows.W_mix <= 0):
        raise DomainError("Mixer phase volumes must be strictly positive")

    n = flows.n_stages
    U_aq_M, U_og_M, U_aq_D, U_og_D, H_aq_M, H_og_M, H_aq_D, H_og_D = x.reshape(N_BLOCKS, n)
    U_star, H_star = x_alg.reshape(2, n)
    U_aq_in, U_og_in, H_aq_in, H_og_in = flows.inlet_concentrations(x)

    phi_U = params.transfer_rate_U * flows.V_mix * (U_aq_M - U_star)
    phi_H = params.transfer_rate_H * flows.V_mix * (H_aq_M - H_star)

    dx = np.empty((N_BLOCKS, n))
    dx[0] = (flows.A * (U_aq_in - U_aq_M) - phi_U) / flows.V_mix
    dx[1] = (flows.O * (U_og_in - U_og_M) + phi_U) / flows.W_mix
    dx[2] = flows.A * (U_aq_M - U_aq_D) / params.V_settler_aq
    dx[3] = flows.O * (U_og_M - U_og_D) / params.V_settler_og
    dx[4] = (flows.A * (H_aq_in - H_aq_M) - phi_H) / flows.V_mix
    dx[5] = (flows.O * (H_og_in - H_og_M) + phi_H) / flows.W_mix
    dx[6] = flows.A * (H_aq_M - H_aq_D) / params.V_settler_aq
    dx[7] = flows.O * (H_og_M - H_og_D) / params.V_settler_og
    return dx.reshape(-1)


def holdup_weights(flows: StageFlows, params: PlantParams) -> np.ndarray:
    """Phase volume (L) attached to every entry of x; inventory = weights . x per species."""
    n = flows.n_stages
    vessel = np.vstack(
        [flows.V_mix, flows.W_mix, np.full(n, params.V_settler_aq), np.full(n, params.V_settler_og)]
    )
    return np.concatenate([vessel.reshape(-1), vessel.reshape(-1)])


def inventory(x: np.ndarray, flows: StageFlows, params: PlantParams) -> Dict[str, float]:
    """Total moles of U and H held in all mixers and settlers."""
    held = holdup_weights(flows, params) * x
    half = len(x) // 2
    return {"U": float(held[:half].sum()), "H": float(held[half:].sum())}


def boundary_fluxes(x: np.ndarray, flows: StageFlows, params: PlantParams) -> Dict[str, Tuple[float, float]]:
    """
    Molar flows crossing the cascade boundary, in mol/h.

    Returns:
        dict: species -> (inflow, outflow). Inflow is feed + scrub + fresh solvent,
        outflow is raffinate (settler 1 aqueous) + loaded solvent (settler 16 organic).
    """
    n = flows.n_stages
    blocks = x.reshape(N_BLOCKS, n)
    raffinate = flows.A[0]
    loaded = flows.O[-1]
    return {
        "U": (
            flows.u * flows.U_aq_F,
            raffinate * blocks[2, 0] + loaded * blocks[3, -1],
        ),
        "H": (
            flows.u * flows.H_aq_F + flows.A_E * flows.H_aq_E,
            raffinate * blocks[6, 0] + loaded * blocks[7, -1],
        ),
    }


def uranium_edge(profile: np.ndarray, fraction: float = 0.5) -> int:
    """
    Location of the uranium edge in a stage profile.

    Args:
        profile (np.ndarray): Settler aqueous uranium per stage (stage 1 first).
        fraction (float): Share of the profile maximum that marks the edge.

    Returns:
        int: Smallest 1-based stage whose concentration reaches fraction * max.
    """
    profile = np.asarray(profile, dtype=float)
    peak = profile.max()
    if peak <= 0:
        return len(profile)
    return int(np.argmax(profile >= fraction * peak)) + 1
