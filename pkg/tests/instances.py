"""Small seeded instances shared by the tests."""

import numpy as np

from constrained_ot import ProblemInstance
from constrained_ot.scenarios import generate_random_instance


def random_instance(m, n, density=0.0, seed=0, gamma0=1.0, gamma=1.0, unbalance=None, ideal=False):
    inst = generate_random_instance(m, n, density, seed=seed, gamma0=gamma0, gamma=gamma)
    rng = np.random.default_rng(10_000 + seed)
    changes = {}
    if unbalance is not None:
        changes["v_tilde"] = inst.v_tilde * inst.u_tilde.sum() / (unbalance * inst.v_tilde.sum())
    if ideal:
        dense = rng.uniform(0.5, 2.0, (m, n)) * inst.pattern.allowed
        changes["ideal"] = type(inst.ideal).from_matrix(dense, inst.pattern)
    return inst.replace(**changes) if changes else inst


def balanced(inst: ProblemInstance) -> ProblemInstance:
    return inst.replace(v_tilde=inst.v_tilde * inst.u_tilde.sum() / inst.v_tilde.sum())
