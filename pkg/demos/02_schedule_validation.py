"""What the schedule validators catch.

Step-size constructors return schedules that satisfy every condition the
convergence guarantees rely on.  Shrinking the dual step ``tau`` too far
breaks the coupling with the primal step and the Laplacian norm; the
validator names the violated condition and the iterations where it fails.
"""
from commslide.bench.instances import generate_instance
from commslide.schedule import dpd_schedule, validate_outer
from commslide.topology import build_graph, laplacian, spectral_constants

problem = generate_instance("lad_convex", m=5, d=4, data_seed=1)
spec = spectral_constants(laplacian(build_graph("path:5"), problem.d))

good = dpd_schedule(spec.op_norm, 20)
print("constructor output passes:", validate_outer(good, spec.op_norm).passed)

# Halving tau lands exactly on the boundary of the coupling condition, so
# it still passes; a quarter of it does not.
for scale in (0.5, 0.25):
    bad = good.replace(tau=good.tau * scale)
    report = validate_outer(bad, spec.op_norm)
    print(f"tau x {scale}: passed={report.passed} failed={report.failed}")
