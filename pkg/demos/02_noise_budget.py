# %% [markdown]
# # Noise budget of the shipped GaAs CNOT
#
# We load the stored pulse and split its infidelity by noise source:
#
# * `I_s` comes from quasistatic detuning offsets.
# * `I_b` comes from quasistatic gradient offsets.
# * `I_f` comes from fast 1/f^α charge noise.
#
# Each one is the excess fidelity loss over the noiseless gate. The total runs
# all sources at once and includes the systematic error.

# %%
import numpy as np

from stq import noise as nz
from stq.experiments import stored_pulse
from stq.fidelity import average_gate_fidelity, fidelity_from_superoperator, infidelity_report
from stq.propagator import evolve
from stq.pulses import render

program, config = stored_pulse("cnot_gaas")
model, noise, grads, target = config.resolve()
kernel = config.kernel(program.fs)
print(program.samples.shape, "samples at", program.fs, "GS/s")

# %%
for alpha in (0.0, 0.7):
    rep = infidelity_report(program, grads, model, noise.replace(alpha=alpha), target,
                            n_real=300, seed=0, kernel=kernel)
    print(f"alpha={alpha}: F={rep.f_total:.4%}  I_s={rep.i_s:.1e}  I_b={rep.i_b:.1e}  "
          f"I_f={rep.i_f:.1e}  L={rep.l_total:.1e}  (MC rel. error {rep.mc_rel_error:.0%})")

# %% [markdown]
# ## White noise two ways
#
# With α = 0 the fast noise is Markovian, so a Lindblad equation describes the
# average channel exactly. Monte Carlo over white traces should agree within
# its standard error. The low-frequency cut-off is dropped here so that both
# methods see the same spectrum.

# %%
white = noise.replace(alpha=0.0, f_low=0.0)
tr = render(program, kernel)
nominal = evolve(tr, grads, model, target)
f_lind = fidelity_from_superoperator(nominal.u_c, nz.lindblad_propagate(tr, grads, model, white).process)
ens = nz.monte_carlo_evaluate(program, grads, model, white, ("fast",), n_real=300, seed=1, kernel=kernel)
f = np.array([average_gate_fidelity(nominal.u_c, v) for v in ens.v_c])
print(f"Lindblad 1-F = {1 - f_lind:.3e}")
print(f"MC       1-F = {1 - f.mean():.3e} +- {f.std(ddof=1) / np.sqrt(f.size):.1e}")

# %% [markdown]
# The optimizer does not call either of these. It uses a first-order expansion
# of the Lindblad result, which has a cheap adjoint gradient.

# %%
from stq.propagator import step_data

sd = step_data(tr.eps, grads.as_array(), model, tr.dt_fine)
print(f"surrogate 1-F = {nz.white_noise_infidelity(sd, white.gamma)[0]:.3e}")
