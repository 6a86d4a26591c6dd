# %% [markdown]
# Checking the treatment-time model.
#
# The weights are only as good as the Cox model. The Schoenfeld test looks
# for time trends in the residuals, and the Kaplan-Meier curve describes the
# marginal time to treatment.

# %%
import numpy as np

from hazshift import fit_cox, generate, kaplan_meier, schoenfeld
from hazshift.simlab import MULTI

ds = generate(MULTI, 2000, seed=7)
fit = fit_cox(ds)
print("coefficients:", np.round(fit.beta, 3), "(truth 0.1, 0.05, 0.1)")

# %%
rep = schoenfeld(ds, fit)
for name, rho, p in zip(rep.covariate_names, rep.rho, rep.p_value):
    print(f"{name}: rho={rho:+.3f} p={p:.3f}")
print(f"global chi2={rep.global_chisq:.2f} on {rep.global_df} df, "
      f"p={rep.global_p_value:.3f}")
print("residual column sums:", rep.residuals.sum(axis=0))

# %%
km = kaplan_meier(ds)
cdf = km.cdf
for t in (0.5, 1.0, 1.5, 1.99):
    k = np.searchsorted(cdf.times, t, side="right") - 1
    print(f"P(T <= {t}) = {cdf(t):.3f}  [{cdf.lower[k]:.3f}, {cdf.upper[k]:.3f}]")
