"""Path-by-path comparison of the network control against the closed form."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..closedform import closed_form_policy
from ..models import MarketState, ModelParams, run_policy, simulate_world
from .solver import NetParams, nn_policy


@dataclass
class Discrepancy:
    """Per-path time-averaged relative gaps (steps 1..N) and terminal inventories."""

    m_rel: np.ndarray
    q_rel: np.ndarray
    q_T_nn: np.ndarray
    q_T_cf: np.ndarray

    def summary(self) -> dict:
        return {
            "m_rel_mean": float(self.m_rel.mean()),
            "m_rel_std": float(self.m_rel.std(ddof=1)),
            "q_rel_mean": float(self.q_rel.mean()),
            "q_rel_std": float(self.q_rel.std(ddof=1)),
            "q_T_nn_mean": float(self.q_T_nn.mean()),
            "q_T_cf_mean": float(self.q_T_cf.mean()),
        }

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "m_rel", "q_rel", "qT_over_q0_nn", "qT_over_q0_closed_form"])
            for i, row in enumerate(zip(self.m_rel, self.q_rel, self.q_T_nn, self.q_T_cf)):
                w.writerow([i, *(repr(float(v)) for v in row)])


def discrepancy_vs_closed_form(params: ModelParams, net: NetParams, initial: MarketState,
                               n_paths: int = 400, n_steps: int = 40, seed: int = 0,
                               quad_order: int = 64) -> Discrepancy:
    """Run both controls on identical noise and compare wealth and inventory.

    The wealth gap is ``|M^NN_t - M_t| / M^NN_t``, the inventory gap
    ``|Q^NN_t - Q_t| / Q0``, each averaged over the N grid points after t0.
    """
    from ..closedform import G2Surface

    world = simulate_world(params, initial, n_steps, n_paths, seed)
    cf = closed_form_policy(params, G2Surface(params, quad_order))
    b_cf = run_policy(params, cf, world, initial.q, initial.m, initial=initial)
    b_nn = run_policy(params, nn_policy(params, net), world, initial.q, initial.m, initial=initial)
    m_nn, m_cf = b_nn.m[:, 1:], b_cf.m[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        m_rel = np.abs(m_nn - m_cf) / np.abs(m_nn)
    q_rel = np.abs(b_nn.q[:, 1:] - b_cf.q[:, 1:]) / initial.q
    return Discrepancy(
        m_rel=m_rel.mean(axis=1),
        q_rel=q_rel.mean(axis=1),
        q_T_nn=np.abs(b_nn.q[:, -1]) / initial.q,
        q_T_cf=np.abs(b_cf.q[:, -1]) / initial.q,
    )
