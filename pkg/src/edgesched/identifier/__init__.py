from .baselines import (
    LinUCBState,
    expected_quality_matrix,
    linucb_choose,
    linucb_choose_batch,
    linucb_update,
    one_hot,
    oracle_route,
    random_probs,
)
from .metrics import bertscore, composite_score, normalize_batch, rouge_l
from .policy import (
    PolicyParams,
    init_policy,
    load_checkpoint,
    policy_forward,
    policy_log_probs,
    policy_probs,
    sample_node,
    sample_nodes,
    save_checkpoint,
    surrogate,
)
from .ppo import Adam, FeedbackBuffer, FeedbackRecord, UpdateStats, ppo_update, record_and_maybe_train
