# %% [markdown]
# A miniature Monte-Carlo study.
#
# Repeat: simulate, estimate, bootstrap. Compare the average estimate with
# the quadrature truth, the spread of estimates with the average bootstrap
# standard error, and count how often the interval covers the truth. The
# full-size study is `hazshift study --dgp main --n 1000 --R 500`.

# %%
from hazshift import run_study
from hazshift.simlab import MAIN

rep = run_study(MAIN, n=500, R=40, B=50, seed=3)
for line in rep.table():
    print("\t".join(line))
