# %% [markdown]
# # World-model walkthrough
#
# Builds every stage by hand on a few small synthetic days: book windows,
# the latent autoencoder, the mixture-density transition model, the reward
# model, dream rollouts and a policy-gradient agent trained only in dreams.
# Sizes are kept small so the script runs in a couple of minutes on one CPU.

# %%
from __future__ import annotations

import numpy as np

from lobworld.agents import AgentConfig, RandomAgent, mean_dream_return, train_agent
from lobworld.autoencoder import AEConfig, train_ae
from lobworld.data import sliding_feature_windows, state_chain
from lobworld.evaluation import AgentPolicy, ZeroPolicy, replay_policy
from lobworld.nn import TrainConfig
from lobworld.reward import RewardBounds, RewardConfig, train_reward
from lobworld.synthetic import generate_dataset
from lobworld.transition import TransitionConfig, train_mdn
from lobworld.world import (WorldConfig, WorldModel, chain_latents, initial_states,
                            reward_corpus, transition_corpus)

train_days = generate_dataset(0, ["ascending"] * 3, 4000).days
test_days = generate_dataset(1, ["ascending"] * 4, 4000, splits=["test"] * 4).days
day = train_days[0]
print(day.name, len(day.lob), "ticks,", len(day.trades), "trade prints")
print("first mids:", np.round(day.lob.mids()[:5], 3))

# %% [markdown]
# A state is 40 ticks of the top 3 levels (12 columns), min-max scaled per
# column. A state chain cuts a day into consecutive windows and records the
# trade context and net flow between them.

# %%
chain = state_chain(day)
print(len(chain), "states; window shape", chain.windows[0].features.shape)
print("average mid of the first states:", np.round(chain.mean_mids()[:4], 3))

# %% [markdown]
# ## Latent autoencoder

# %%
X = np.concatenate([sliding_feature_windows(d.lob, 40, 10) for d in train_days])
held = sliding_feature_windows(test_days[0].lob, 40, 40)
ae, rep = train_ae(X, AEConfig(),
                   TrainConfig(lr=3e-3, batch_size=32, epochs=30, patience=6), held)
print(f"held-out MSE {rep.initial_val_mse:.4f} -> {rep.final_val_mse:.4f}")

# %% [markdown]
# ## Transition and reward models
#
# The transition model reads the last N=10 (latent, action, context) rows
# and outputs a 5-component diagonal Gaussian mixture over the next latent.

# %%
chains = chain_latents(train_days, ae, offsets=(0, 20))
Xs, Ys = transition_corpus(chains)
mdn, res = train_mdn(Xs, Ys, TransitionConfig(hidden=32),
                     TrainConfig(lr=3e-3, batch_size=32, epochs=6, patience=3))
print("transition NLL per epoch:", np.round(res.val_loss, 2))

zt, zt1, dm = reward_corpus(chains)
rm, _ = train_reward(zt, zt1, dm, RewardConfig(lstm_units=16, dense_units=16),
                     TrainConfig(lr=3e-3, batch_size=32, epochs=10, patience=3))
agree = np.mean(np.sign(rm.predict_delta(zt, zt1)) == np.sign(dm))
print(f"reward model sign agreement on training pairs: {agree:.2f}")

# %% [markdown]
# ## Dreams and a dream-trained agent

# %%
world = WorldModel(ae, mdn, rm, RewardBounds.from_delta_mids(dm), initial_states(chains),
                   np.concatenate([c.emb for c in chains]), WorldConfig())
agent, curve = train_agent("pg", world, AgentConfig(kind="pg", horizon=100, hidden=(32, 32),
                                                    iterations=20, episodes_per_iteration=8))
rng = np.random.default_rng(0)
print("random agent dream return :", round(mean_dream_return(RandomAgent(), world, 100, 8, rng), 2))
print("trained agent dream return:", round(mean_dream_return(agent, world, 100, 8, rng,
                                                             greedy=True), 2))

# %% [markdown]
# ## Replay on held-out days

# %%
for pol in (ZeroPolicy(), AgentPolicy(agent, ae)):
    print(pol.name, np.round(replay_policy(pol, test_days).totals(), 1))
