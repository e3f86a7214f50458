# %% [markdown]
# # How much data can we drop?
#
# Filtering ratio r means training on 1/r of the rows. Pretraining is done
# once and reused at every ratio (the Experiment object caches it). Plain
# random sampling at the same ratios is shown for comparison.

# %%
import tempfile
from pathlib import Path

from cadc import pipeline
from cadc.config import RunConfig
from cadc.synthetic import latent_factor_log, write_movielens

work = Path(tempfile.mkdtemp())
write_movielens(latent_factor_log(n_users=300, n_items=200, per_user=25, seed=2), work / "data")
cfg = RunConfig(ratings=str(work / "data" / "ratings.dat"), users=str(work / "data" / "users.dat"),
                items=str(work / "data" / "movies.dat"), emb=32, epochs=20, mf_epochs=20,
                lr=1e-2, mf_lr=1e-2, seed=2, out=str(work / "runs"))
exp = pipeline.Experiment.load(cfg)

# %%
print("ratio  fraction   cadc HR  random HR")
for r in (1, 2, 5, 10, 20, 50):
    frac = pipeline.filtering_fraction(r)
    cadc = exp.run("cadc", frac)
    rand = exp.run("random", frac)
    print(f"{r:5d}  {frac:8.3f}  {cadc.hr_at_10:8.1f}  {rand.hr_at_10:9.1f}")

# %% the same thing from the shell:
#   cadc sweep --ratings data/ratings.dat --ratios 1 2 5 10 20 50 --out runs
print((work / "runs").resolve())
