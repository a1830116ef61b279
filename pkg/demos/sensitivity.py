"""How the two inputs a balloon retrieval cannot observe bias its products.

A receiver inside the atmosphere needs the refractive index at the
balloon (n_r) to turn Doppler into bending, and a model of the atmosphere
above the balloon to remove the transmitter-side bending before the Abel
inversion.  Both are perturbed here against a known exponential truth.

    python3 demos/sensitivity.py
"""

import numpy as np

from balloonro.atmosphere import Exponential
from balloonro.preprocess import series_from_sim
from balloonro.raytracer import hover, simulate_occultation
from balloonro.retrieval import Quality, abel_invert_partial, doppler_to_bending, forward_bending
from balloonro.scenario import balloon_scenario

sc = balloon_scenario()
r_rx = float(np.linalg.norm(sc.rx_pos))
r0 = r_rx - sc.meta["height"]
model = Exponential(300.0, 7000.0, r0)
n_true = float(model.eval(r_rx)[0])

# receiver refractive index: retrieve the same simulated Doppler with a biased n_r
sim = simulate_occultation(model, sc.occ, hover(sc.rx_pos), t_start=sc.t_start,
                           t_end=sc.t_end, dt=2.0)
series = series_from_sim(sim)
base = doppler_to_bending(series, n_r=n_true)
print(f"n_r at 18 km is 1 + {1e6 * (n_true - 1):.2f}e-6")
print("bias in n_r    median dalpha (rad)   median dalpha/alpha")
for dN in (-20.0, -10.0, 10.0, 20.0, 40.0):
    prof = doppler_to_bending(series, n_r=n_true + dN * 1e-6)
    t, i, j = np.intersect1d(prof.t, base.t, return_indices=True)
    keep = ((prof.quality[i] == Quality.OK) & (base.quality[j] == Quality.OK)
            & (base.alpha[j] > 1e-3))
    i, j = i[keep], j[keep]
    d = prof.alpha[i] - base.alpha[j]
    print(f"  {dN:+5.0f} N        {np.median(d):+.3e}            "
          f"{100 * np.median(d / base.alpha[j]):+.2f}%")
print("  a positive n_r bias lowers the retrieved bending; n_r must come from in-situ")
print("  meteorology or a model, since the spaceborne value n_r = 1 is some -23 N off\n")

# topside: invert exact bending with a biased model of the air above the balloon
x_s = float(model.refractional_radius(r0 + 1.0))
x_r = float(model.refractional_radius(r_rx))
prof = forward_bending(model, r_rx, np.linspace(x_s, x_r - 20.0, 300))
ref = abel_invert_partial(prof, r_rx, n_true, topside=model)
print("topside N0 bias   dN/N at 0 km   at 8 km   at 16 km")
for scale in (0.9, 1.1):
    biased = abel_invert_partial(prof, r_rx, n_true, topside=Exponential(300.0 * scale, 7000.0, r0))
    rel = biased.N / ref.N - 1.0
    h = ref.r - r0
    at = [100 * np.interp(z, h, rel) for z in (0.0, 8000.0, 16000.0)]
    print(f"  {100 * (scale - 1):+4.0f}%          {at[0]:+.3f}%      {at[1]:+.3f}%   {at[2]:+.3f}%")
print("  a heavier topside removes more bending, so the air below comes out thinner;")
print("  the error grows towards the balloon, where the removed share is largest")
