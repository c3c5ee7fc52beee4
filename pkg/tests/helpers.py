"""Builders shared by the test modules."""
from __future__ import annotations

import numpy as np

from lgrowth.config import MCMCSettings, ModelConfig, PriorConfig
from lgrowth.data import LongitudinalDataset, Observation, OutcomeSpec
from lgrowth.gibbs import GibbsModel
from lgrowth.oracle import TinyModel
from lgrowth.priors import HierIWState, draw_hier_iw_prior

ANCHOR = OutcomeSpec(1, "anchor", "continuous", "accuracy", 1, "fixed_to_one")
SPEED = OutcomeSpec(2, "speed", "continuous", "speed", 1, "free")


def obs(sid, session, age, y, position="goalkeeper", post=0):
    return Observation(str(sid), str(session), float(age), position, post, tuple(y))


def tiny_dataset(tiny: TinyModel) -> LongitudinalDataset:
    rows = [obs(f"s{i}", t + 1, a, (v,))
            for i, (ages, ys) in enumerate(zip(tiny.ages, tiny.y))
            for t, (a, v) in enumerate(zip(ages, ys))]
    return LongitudinalDataset.from_observations(rows, (ANCHOR,))


def tiny_config(tiny: TinyModel, mcmc: MCMCSettings, **kw) -> ModelConfig:
    """Everything but beta, mu_beta and alpha held at the tiny model's known
    values; the second spline segment is unused because ages sit below 12."""
    fixed = {"sigma_beta", "gamma", "loadings", "sigma_eps", "shrinkage"}
    initial = {"sigma_beta": [[tiny.slope_var, 0.0], [0.0, 1.0]],
               "sigma_eps": [[tiny.noise_var]], "gamma": [[0.0] * 4],
               "mu_prior_var": tiny.mu_prior_var, "gamma_prior_var": 1.0}
    if tiny.alpha_fixed is not None:
        fixed.add("alpha")
        initial["alpha"] = [tiny.alpha_fixed]
    return ModelConfig(knots=(12.0,), outcomes=(ANCHOR,), priors=PriorConfig(alpha_var=tiny.alpha_prior_var),
                       mcmc=mcmc, fixed=frozenset(fixed), initial=initial, **kw)


GEWEKE_NAMES = ("mu_beta[0]", "mu_beta[1]", "alpha[1]", "alpha[2]", "loading[2]",
                "sigma_beta[0,0]", "sigma_beta[0,1]", "sigma_beta[1,1]",
                "sigma_eps[0,0]", "sigma_eps[0,1]", "sigma_eps[1,1]")


class GewekeHarness:
    """Two subjects, two continuous outcomes on one facet (anchor plus a free
    loading), one knot. Covariate effects and shrinkage are held fixed so
    the priors on the remaining blocks are Gaussian or hierarchical IW.
    Ages are kept near the knot at 1 year so the data are only moderately
    informative and the successive-conditional chain mixes."""

    def __init__(self, collapsed: bool = True, seed: int = 0):
        rows = [obs(f"s{i}", t + 1, a + 0.2 * i, (0.0, 0.0))
                for i in range(2) for t, a in enumerate((0.5, 1.2, 1.9))]
        dataset = LongitudinalDataset.from_observations(rows, (ANCHOR, SPEED))
        self.A = 1.0
        cfg = ModelConfig(knots=(1.0,), outcomes=(ANCHOR, SPEED),
                          priors=PriorConfig(iw_scale=self.A, alpha_var=1.0),
                          fixed=frozenset({"gamma", "shrinkage"}), collapsed=collapsed,
                          initial={"gamma": np.zeros((2, 4)), "mu_prior_var": 1.0,
                                   "gamma_prior_var": 1.0})
        self.model = GibbsModel(dataset, cfg)
        self.rng = np.random.default_rng(seed)
        self.state = self.model.initial_state()

    def prior_draw(self):
        m, s, rng = self.model, self.state, self.rng
        s.mu_beta = rng.normal(0.0, 1.0, m.q)
        s.sigma_beta, s.iw_beta = draw_hier_iw_prior(HierIWState.initial(m.q, 2.0, self.A), rng)
        s.sigma_eps, s.iw_eps = draw_hier_iw_prior(HierIWState.initial(m.D, 2.0, self.A), rng)
        s.alpha = rng.normal(0.0, 1.0, m.D)
        s.loadings = np.array([1.0, rng.normal(-0.5, 0.5)])
        s.beta = rng.multivariate_normal(s.mu_beta, s.sigma_beta, m.n)

    def regenerate_data(self):
        m, s = self.model, self.state
        s.y = m.mean_matrix(s) + self.rng.multivariate_normal(np.zeros(m.D), s.sigma_eps, m.N)

    def flat(self) -> np.ndarray:
        s = self.state
        iu = np.triu_indices(2)
        return np.r_[s.mu_beta, s.alpha, s.loadings[1], s.sigma_beta[iu], s.sigma_eps[iu]]

    def run(self, n: int, sweeps: int) -> tuple[np.ndarray, np.ndarray]:
        """``n`` forward prior draws, and ``n`` final states of
        successive-conditional chains (each started from an exact prior
        draw, then ``sweeps`` rounds of Gibbs sweep + data regeneration)."""
        forward = []
        for _ in range(n):
            self.prior_draw()
            forward.append(self.flat())
        resim = []
        for _ in range(n):
            self.prior_draw()
            self.regenerate_data()
            for it in range(sweeps):
                self.model.sweep(self.state, self.rng, it)
                self.regenerate_data()
            resim.append(self.flat())
        return np.array(forward), np.array(resim)
