"""Check tape gradients of a small two-layer LSTM against central differences.

The LSTM is smooth everywhere; ReLU models agree too, away from kinks.
"""

import numpy as np

from dementia_nlp.autodiff import grad_check, softmax_xent
from dementia_nlp.models import default_config, forward, init_model

rng = np.random.default_rng(0)
cfg = default_config("lstm", vocab_size=12, max_len=8, embed_dim=5, hidden=4)
m = init_model("lstm", cfg, rng)
ids = rng.integers(2, 12, size=(4, 8))
lengths = np.array([8, 3, 7, 1])
ids[np.arange(8)[None] >= lengths[:, None]] = 0
y = np.array([0, 1, 1, 0])


def loss(_):
    logits = forward(m, ids, lengths, train=True, rng=np.random.default_rng(5))
    return softmax_xent(logits, y)[1]


print(f"{m.params.num_parameters()} parameters")
# some recurrent-weight gradients are ~1e-7 at this init, so a smaller eps
# mostly measures round-off in the loss difference
for eps in (1e-4, 1e-5):
    print(f"eps={eps:g}: max relative error {grad_check(loss, m.params, eps=eps):.2e}")
