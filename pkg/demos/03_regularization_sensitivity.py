"""
How the L2 weight changes the baseline comparison
=================================================

The regulariser is summed over every embedding row a batch touches, so with
lambda3 = 1e-4 and a few thousand rows per batch it outweighs the averaged
BPR term.  The baseline then barely moves from its initialisation and ranks
almost purely by item degree, which makes it easy for PAAC to look fairer.

This script trains the baseline and one PAAC cell at two values of lambda3,
and PAAC once more with the auxiliary terms averaged ("mean" reduction) so
they sit on the same scale as BPR.  One seed, a few minutes on one CPU.

    python demos/03_regularization_sensitivity.py
"""

from dataclasses import replace

from paac.experiment import ExperimentSettings, make_dataset, train_and_evaluate
from paac.losses import Hyperparams

settings = ExperimentSettings(seeds=(0,))
data, pop = make_dataset(settings, seed=0)

runs = [
    ("baseline, lambda3=1e-4", dict(lambda1=0.0, lambda2=0.0, lambda3=1e-4)),
    ("paac 1/1, lambda3=1e-4", dict(lambda1=1.0, lambda2=1.0, lambda3=1e-4)),
    ("baseline, lambda3=1e-6", dict(lambda1=0.0, lambda2=0.0, lambda3=1e-6)),
    ("paac 1/1, lambda3=1e-6", dict(lambda1=1.0, lambda2=1.0, lambda3=1e-6)),
    ("paac 0.1/0.1 mean, 1e-6", dict(lambda1=0.1, lambda2=0.1, lambda3=1e-6, reduction="mean")),
]

base = Hyperparams(lr=settings.lr, batch_size=settings.batch_size, epochs=settings.max_epochs,
                   dtype=settings.dtype, seed=0)
print(f"{'run':<26}{'ndcg':>8}{'unpop':>8}{'gap':>9}{'mmd':>8}{'cos':>8}")
for label, overrides in runs:
    result = train_and_evaluate(label, data, pop, replace(base, **overrides), settings)
    s = result.summary()
    print(f"{label:<26}{s['ndcg']:>8.4f}{s['ndcg_unpopular']:>8.4f}{s['ndcg_gap']:>+9.4f}"
          f"{s['mmd']:>8.4f}{s['cross_cosine']:>8.4f}")
