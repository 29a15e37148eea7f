# ### Query identifier
#
# A small MLP maps a query embedding to a distribution over nodes. It learns
# from the quality of served answers with a clipped policy-gradient update.
# A toy: two domains, two nodes, node d is the right place for domain d.

import numpy as np

from edgesched.core import PPOConfig, rng_stream
from edgesched.identifier import (
    FeedbackBuffer,
    FeedbackRecord,
    LinUCBState,
    composite_score,
    init_policy,
    linucb_choose,
    linucb_update,
    policy_log_probs,
    record_and_maybe_train,
    rouge_l,
    sample_nodes,
)
from edgesched.workload import gen_slot_batch, make_prototypes

print("rouge-l of two token lists:", round(rouge_l("the cat sat on the mat".split(), "the cat on a mat".split()), 3))
print("composite (alpha 1, 0.5):", composite_score(0.6, 0.8))

protos = make_prototypes(2, 16, 0.25, rng_stream(0, "protos"))
rng = rng_stream(0, "demo")
params = init_policy(16, 2, rng_stream(0, "policy"))
cfg = PPOConfig(buffer_threshold=256)
buf = FeedbackBuffer(cfg.buffer_threshold)
ucb = LinUCBState.create(2, 16)

for slot in range(30):
    batch = gen_slot_batch(slot, 128, 1.0, protos, rng)
    p = np.exp(policy_log_probs(params, batch.embeddings))
    nodes, logp = sample_nodes(p, rng)
    reward = np.where(nodes == batch.domains, 0.9, 0.3) + 0.05 * rng.standard_normal(len(nodes))
    for e, n, lp, r in zip(batch.embeddings, nodes, logp, np.clip(reward, 0, 1)):
        buf, params, _ = record_and_maybe_train(buf, FeedbackRecord(e, int(n), float(lp), float(r), slot),
                                                params, cfg, rng=rng)
        linucb_update(ucb, e, int(n), float(r))
    if slot % 10 == 9:
        acc = float(np.mean(p.argmax(axis=1) == batch.domains))
        ucb_acc = float(np.mean([linucb_choose(ucb, e, 0.0) == d for e, d in zip(batch.embeddings, batch.domains)]))
        print(f"slot {slot + 1}: policy picks the right node for {acc:.0%}, LinUCB {ucb_acc:.0%}")
