from hypothesis import HealthCheck, settings

# Property tests over million-row arrays can trip the default 200 ms
# deadline on loaded CI machines; correctness here is deterministic per
# example, so wall-clock deadlines only add flakes.
settings.register_profile(
    "washdetect", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("washdetect")
