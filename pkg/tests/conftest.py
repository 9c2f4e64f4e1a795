import numpy as np

from divlab.diversity import FiniteInstance
from divlab.seeding import make_rng


def random_instance(seed, n_x=3, n_z=4, n_h=3, n_fso=3, n_fta=3, d_so=1, d_ta=1,
                    n_tasks=2, coarse=True):
    """Random finite instance whose truths are members of their classes.

    Values are drawn on a coarse grid (quarters) by default so comparisons in
    enumeration tests never hinge on float ties.
    """
    rng = make_rng(seed, "random-instance")
    w = rng.random(n_x) + 0.1
    w /= w.sum()
    draw = lambda shape: (np.round(rng.uniform(-1, 1, size=shape) * 4) / 4
                          if coarse else rng.uniform(-1, 1, size=shape))
    features = draw((n_z, 2))
    reps = rng.integers(0, n_z, size=(n_h, n_x))
    source_functions = draw((n_fso, n_z, d_so))
    target_functions = draw((n_fta, n_z, d_ta))
    return FiniteInstance(
        weights=w, features=features, representations=reps,
        source_functions=source_functions, target_functions=target_functions,
        sources=[int(t) for t in rng.integers(0, n_fso, size=n_tasks)],
        target_true=int(rng.integers(0, n_fta)),
        true_rep=int(rng.integers(0, n_h)))
