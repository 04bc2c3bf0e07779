"""The pseudo-radius trade-off: wider tubes are easier to learn but fuse
neighbouring structures. Loop errors appear as the radius grows."""

from vesseltok.pipeline import ablate_radius, radius_phantoms

for row in ablate_radius(radius_phantoms(), (0.008, 0.016, 0.032), grid_dims=256):
    print(f"r={row.radius:.3f}  mean |d_beta0| {row.mean_d_beta0:.2f}  "
          f"mean |d_beta1| {row.mean_d_beta1:.2f}  failures {row.failures}/{row.cases}")
