"""How the FLOAT detector separates on-track rollouts from stuck ones.

Twenty scripted demonstrations are embedded, a threshold is calibrated from
leave-one-out demo prefixes, and then two kinds of rollout are scored: the
scripted expert (should stay below the threshold) and a random policy
(should trip it).
"""
import numpy as np

from agps import env as envmod
from agps.encoding import make_encoder
from agps.orchestrator import RunConfig, loo_indices
from agps.ot_float import calibrate_threshold, float_index, should_trigger
from agps.state import EnvAction

cfg = envmod.insertion_config()
rng = np.random.default_rng(0)
demos = envmod.generate_demos(cfg, 20, rng)
center, scale = envmod.obs_normalizer(cfg)
encoder = make_encoder(0, envmod.obs_dim(cfg), 32, center, scale)
experts = [encoder.encode_vectors(a) for a in demos.observation_arrays()]
print(f"{len(demos)} demos, lengths {sorted(len(e) for e in experts)}")

threshold = calibrate_threshold(loo_indices(experts, RunConfig().detector))
print(f"threshold from leave-one-out prefixes: {threshold:.3f}")


def score(policy, n=10, steps=20):
    hits = []
    for _ in range(n):
        ep = envmod.rollout(cfg, rng, policy, max_steps=steps)
        emb = encoder.encode_vectors(np.array([o.vector() for o in ep.observations]))
        lam = float_index(emb, experts).value
        hits.append(should_trigger(lam, threshold))
        print(f"  lambda {lam:.3f} -> {'trigger' if hits[-1] else 'autonomous'}")
    return np.mean(hits)


print("expert rollouts:")
expert_rate = score(lambda s: envmod.expert_action(s, cfg))
lim = np.asarray(cfg.action_limit)
print("random rollouts:")
random_rate = score(lambda s: EnvAction(rng.uniform(-1, 1, 6) * lim))
print(f"trigger rate: expert {expert_rate:.0%}, random {random_rate:.0%}")
