"""Compare closed-form service moments against Monte Carlo for a few channel states."""
from platoon_edca.config import EdcaParams, FrameParams
from platoon_edca.edca import service_time_moments
from platoon_edca.sim import empirical_service_sampler

e, f = EdcaParams(), FrameParams()
print(" ps    sigma0  AC   Ts model (us)  Ts MC (us)   sd model   sd MC")
for ps, s0 in [(0.0, 0.0), (0.1, 0.02), (0.3, 0.1), (0.5, 0.2)]:
    for q in (0, 1):
        ts, ds = service_time_moments(ps, s0, e, f, q)
        mc = empirical_service_sampler(ps, s0, e, f, q, samples=200_000, seed=1)
        print(f"{ps:4.2f}  {s0:6.2f}  {q:2d}   {ts * 1e6:12.2f}  {mc.mean * 1e6:10.2f}  "
              f"{ds ** 0.5 * 1e6:9.2f}  {mc.variance ** 0.5 * 1e6:6.2f}")
