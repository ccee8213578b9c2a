"""Thinned posterior draws across chains."""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ChainDraws", "PosteriorArchive", "TRACKED"]

#: tracked quantity -> dtype of its stored draws
TRACKED = {
    "C": np.uint8,
    "Phi": np.float64,
    "S": np.uint8,
    "G": np.float64,
    "B": np.float64,
    "Xi": np.float64,
    "psi": np.float64,
    "nu": np.float64,
}


@dataclass
class ChainDraws:
    C: np.ndarray
    Phi: np.ndarray
    S: np.ndarray
    G: np.ndarray
    B: np.ndarray
    Xi: np.ndarray
    psi: np.ndarray
    nu: np.ndarray
    loglik: np.ndarray
    n_sweeps: int = 0
    seed: int = None
    stream_id: int = 0
    seconds: float = 0.0

    @classmethod
    def empty(cls, keep, n, p, L, q, m, n_total, seed=None, stream_id=0):
        return cls(
            C=np.zeros((keep, n, L), np.uint8),
            Phi=np.zeros((keep, n, L)),
            S=np.zeros((keep, p, L), np.uint8),
            G=np.zeros((keep, p, L)),
            B=np.zeros((keep, q, L)),
            Xi=np.zeros((keep, m, L)),
            psi=np.zeros(keep),
            nu=np.zeros((keep, L)),
            loglik=np.full(n_total, np.nan),
            seed=seed,
            stream_id=stream_id,
        )

    def record(self, d, state):
        self.C[d] = state.C
        self.Phi[d] = state.phi()
        self.S[d] = state.S
        self.G[d] = state.G
        self.B[d] = state.reg.B
        self.Xi[d] = state.reg.Xi
        self.psi[d] = state.psi
        self.nu[d] = state.nu

    @property
    def n_draws(self):
        return self.psi.shape[0]

    def get(self, name):
        return getattr(self, name)


@dataclass
class PosteriorArchive:
    chains: list
    hypers: object
    config: object
    seed: int = 0
    site_of: np.ndarray = None
    species: tuple = ()
    samples: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self):
        return len(self.chains)

    @property
    def n_draws(self):
        return sum(c.n_draws for c in self.chains)

    def stacked(self, name):
        """Draws of ``name`` with shape ``(chains, draws, ...)``."""
        return np.stack([c.get(name) for c in self.chains])

    def pooled(self, name):
        """Draws of ``name`` from all chains concatenated along axis 0."""
        return np.concatenate([c.get(name) for c in self.chains])

    def theta_draws(self):
        return self.pooled("C") * self.pooled("Phi")

    def lam_draws(self):
        return self.pooled("S") * self.pooled("G")

    def posterior_mean(self, name):
        return self.pooled(name).mean(axis=0)

    def posterior_median_binary(self, name):
        """Elementwise posterior median of a binary quantity (ties go to 0)."""
        return (self.pooled(name).mean(axis=0) > 0.5).astype(np.uint8)
