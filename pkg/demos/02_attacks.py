# coding: utf-8
# # Attacking a protected model
#
# Four attacks on the protected GRU from the first demo: magnitude pruning,
# fine-tuning, overwriting with a new key and signature, and retraining
# toward a partly flipped signature. Each one is scored with the owner's
# genuine key.

# %%
import numpy as np

from gatekeeper import ExperimentConfig, Rng
from gatekeeper.attacks import finetune_attack, flip_signs, measure, overwrite_attack, prune_sweep
from gatekeeper.experiment import make_key, make_signature, prepare, train

cfg = ExperimentConfig.from_dict({
    "dataset": {"kind": "synthetic_text", "size": 3000, "vocab_size": 10, "num_classes": 6,
                "length_min": 20, "length_max": 30},
    "model": {"cell": "gru", "bidirectional": True, "hidden": 32, "embed": 32},
    "protection": {"key": {"l": 2}, "signature": {"text": "priv"}, "trigger_size": 50},
    "training": {"epochs": 20, "batch": 16, "trigger": 2, "lr": 3e-3},
})
prep = prepare(cfg)
out = train(cfg, prep=prep)
model, key, sig = out.model, out.key, out.signature
budget = round(0.2 * out.metrics["steps"])
print("trained for", out.metrics["steps"], "steps; attack budget", budget)


def show(label, m):
    t, tr, s = measure(m, key, sig, prep.test, prep.trigger)
    print(f"{label:>18}: test {t:.3f}  trigger {tr:.3f}  signature bits {s:.3f}")


show("original", model)

# %% [markdown]
# ## Pruning
#
# The smallest weights across every weight matrix are zeroed together.

# %%
for row in prune_sweep(model, [0.0, 0.2, 0.4, 0.6, 0.8], key, sig, prep.test, prep.trigger):
    print({k: round(v, 3) for k, v in row.items()})

# %% [markdown]
# ## Fine-tuning and overwriting
#
# The attacker trains on held-out data at a tenth of the learning rate. For
# the overwrite they embed their own key and signature.

# %%
show("fine-tuned", finetune_attack(model, prep.val, budget, lr=3e-4))
evil_key = make_key(prep, model, seed=1234)
evil_sig = make_signature(cfg, model.hidden_size, "evil")
show("overwritten", overwrite_attack(model, evil_key, evil_sig, prep.val, budget, lr=3e-3, trigger=prep.trigger))

# %% [markdown]
# ## Flipping signature bits
#
# The attacker knows the key, inverts part of the signature and retrains
# until the new signs are embedded.

# %%
for frac in (0.1, 0.2, 0.4):
    attacked, bad, idx, steps = flip_signs(model, key, sig, frac, prep.val, lr=3e-3, trigger=prep.trigger,
                                           seed=int(frac * 100))
    show(f"flip {frac:.0%} ({steps} st)", attacked)
    print("    now decodes as", repr(bad.text), "flipped", np.asarray(idx).tolist())
