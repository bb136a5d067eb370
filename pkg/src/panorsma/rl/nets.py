"""Recurrent actor/critic networks with hand-derived reverse-mode gradients.

Both networks are a single LSTM cell followed by a linear head; the actor adds
a learned log-std vector defining a diagonal Gaussian over raw actions.
Parameters live in plain dicts of float64 arrays so they can be flattened,
checkpointed and finite-difference checked coordinate by coordinate.

Gate layout in the stacked (4H,) pre-activation: input, forget, candidate,
output.
"""

from __future__ import annotations

import math

import numpy as np

ParamDict = dict[str, np.ndarray]

LOG_2PI = math.log(2.0 * math.pi)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def init_lstm(rng: np.random.Generator, in_dim: int, hidden: int) -> ParamDict:
    scale = 1.0 / math.sqrt(hidden)
    params = {
        "w_x": rng.uniform(-scale, scale, (4 * hidden, in_dim)),
        "w_h": rng.uniform(-scale, scale, (4 * hidden, hidden)),
        "b": np.zeros(4 * hidden),
    }
    params["b"][hidden:2 * hidden] = 1.0  # open forget gates early in training
    return params


def init_policy(rng: np.random.Generator, obs_dim: int, act_dim: int,
                hidden: int, log_std_init: float = -0.5) -> ParamDict:
    scale = 1.0 / math.sqrt(hidden)
    params = init_lstm(rng, obs_dim, hidden)
    params["w_out"] = rng.uniform(-scale, scale, (act_dim, hidden))
    params["b_out"] = np.zeros(act_dim)
    params["log_std"] = np.full(act_dim, log_std_init)
    return params


def init_critic(rng: np.random.Generator, obs_dim: int, hidden: int) -> ParamDict:
    scale = 1.0 / math.sqrt(hidden)
    params = init_lstm(rng, obs_dim, hidden)
    params["w_out"] = rng.uniform(-scale, scale, (1, hidden))
    params["b_out"] = np.zeros(1)
    return params


def hidden_size(params: ParamDict) -> int:
    return params["w_h"].shape[1]


def zero_state(params: ParamDict) -> tuple[np.ndarray, np.ndarray]:
    h = hidden_size(params)
    return np.zeros(h), np.zeros(h)


def cell_step(params: ParamDict, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One LSTM step; returns (h2, c2, cache-for-backward)."""
    hid = hidden_size(params)
    z = params["w_x"] @ x + params["w_h"] @ h + params["b"]
    gi = _sigmoid(z[:hid])
    gf = _sigmoid(z[hid:2 * hid])
    gg = np.tanh(z[2 * hid:3 * hid])
    go = _sigmoid(z[3 * hid:])
    c2 = gf * c + gi * gg
    tc = np.tanh(c2)
    h2 = go * tc
    cache = (x, h, c, gi, gf, gg, go, tc)
    return h2, c2, cache


def sequence_forward(params: ParamDict, xs: np.ndarray, h0: np.ndarray,
                     c0: np.ndarray, resets: np.ndarray):
    """Run the cell over a (T, D) sequence.

    ``resets[t]`` true zeroes the incoming state before step t, cutting the
    recurrence (and its gradient) at episode boundaries.
    """
    steps = len(xs)
    hid = hidden_size(params)
    hs = np.empty((steps, hid))
    caches = []
    h, c = h0, c0
    for t in range(steps):
        if resets[t]:
            h, c = np.zeros(hid), np.zeros(hid)
        h, c, cache = cell_step(params, xs[t], h, c)
        hs[t] = h
        caches.append(cache)
    return hs, (h, c), caches


def sequence_backward(params: ParamDict, caches, resets: np.ndarray,
                      d_hs: np.ndarray) -> ParamDict:
    """Backpropagate through time given d loss / d h_t for every step."""
    hid = hidden_size(params)
    grads = {
        "w_x": np.zeros_like(params["w_x"]),
        "w_h": np.zeros_like(params["w_h"]),
        "b": np.zeros_like(params["b"]),
    }
    dh_next = np.zeros(hid)
    dc_next = np.zeros(hid)
    for t in range(len(caches) - 1, -1, -1):
        x, h_prev, c_prev, gi, gf, gg, go, tc = caches[t]
        dh = d_hs[t] + dh_next
        dc = dc_next + dh * go * (1.0 - tc * tc)
        d_go = dh * tc
        d_gf = dc * c_prev
        d_gi = dc * gg
        d_gg = dc * gi
        dz = np.concatenate([
            d_gi * gi * (1.0 - gi),
            d_gf * gf * (1.0 - gf),
            d_gg * (1.0 - gg * gg),
            d_go * go * (1.0 - go),
        ])
        grads["w_x"] += np.outer(dz, x)
        grads["w_h"] += np.outer(dz, h_prev)
        grads["b"] += dz
        if resets[t]:
            dh_next = np.zeros(hid)
            dc_next = np.zeros(hid)
        else:
            dh_next = params["w_h"].T @ dz
            dc_next = dc * gf
    return grads


def head_forward(params: ParamDict, hs: np.ndarray) -> np.ndarray:
    return hs @ params["w_out"].T + params["b_out"]


def head_backward(params: ParamDict, hs: np.ndarray, d_out: np.ndarray):
    """Returns (head grads, d loss / d hs)."""
    grads = {"w_out": d_out.T @ hs, "b_out": d_out.sum(axis=0)}
    return grads, d_out @ params["w_out"]


def gaussian_log_prob(actions: np.ndarray, means: np.ndarray,
                      log_std: np.ndarray) -> np.ndarray:
    """Row-wise log-density of a diagonal Gaussian; inputs (T, A) or (A,)."""
    std = np.exp(log_std)
    z = (actions - means) / std
    per_dim = -0.5 * z * z - log_std - 0.5 * LOG_2PI
    return per_dim.sum(axis=-1)


def policy_act(params: ParamDict, obs: np.ndarray, state, noise_scale: float,
               rng: np.random.Generator | None, deterministic: bool = False):
    """Sample one raw action and its exact Gaussian log-density.

    The extra exploration noise perturbs the raw sample before any squashing;
    the returned log-probability is evaluated at the perturbed action, so the
    stored value matches what a replay of the same action recomputes.
    """
    h, c = state
    if obs.shape != (params["w_x"].shape[1],):
        raise ValueError(f"observation shape {obs.shape} does not match the network")
    h2, c2, _ = cell_step(params, obs, h, c)
    mean = params["w_out"] @ h2 + params["b_out"]
    if deterministic:
        action = mean.copy()
    else:
        if rng is None:
            raise ValueError("sampling requires a generator")
        std = np.exp(params["log_std"])
        action = mean + std * rng.standard_normal(mean.shape)
        if noise_scale > 0.0:
            action = action + noise_scale * rng.standard_normal(mean.shape)
    log_prob = float(gaussian_log_prob(action, mean, params["log_std"]))
    return action, log_prob, (h2, c2)


def critic_value(params: ParamDict, obs: np.ndarray, state):
    h, c = state
    if obs.shape != (params["w_x"].shape[1],):
        raise ValueError(f"observation shape {obs.shape} does not match the network")
    h2, c2, _ = cell_step(params, obs, h, c)
    value = float((params["w_out"] @ h2 + params["b_out"])[0])
    return value, (h2, c2)


def policy_sequence_log_probs(params: ParamDict, xs: np.ndarray,
                              actions: np.ndarray, h0, c0, resets):
    """Log-probabilities of stored actions when replaying a segment."""
    hs, _, _ = sequence_forward(params, xs, h0, c0, resets)
    means = head_forward(params, hs)
    return gaussian_log_prob(actions, means, params["log_std"])


def critic_sequence_values(params: ParamDict, xs: np.ndarray, h0, c0, resets):
    hs, _, _ = sequence_forward(params, xs, h0, c0, resets)
    return head_forward(params, hs)[:, 0]


def actor_segment_loss(params: ParamDict, xs, actions, old_log_probs, advantages,
                       h0, c0, resets, clip_eps: float, scale: float = 1.0):
    """Clipped-surrogate loss (negated objective) and its gradients for a segment.

    ``scale`` weighs this segment's mean inside a larger average (segment
    length over buffer length when minibatches differ in size).
    """
    steps = len(xs)
    hs, _, caches = sequence_forward(params, xs, h0, c0, resets)
    means = head_forward(params, hs)
    std = np.exp(params["log_std"])
    z = (actions - means) / std
    log_probs = (-0.5 * z * z - params["log_std"] - 0.5 * LOG_2PI).sum(axis=1)

    ratios = np.exp(log_probs - old_log_probs)
    unclipped = ratios * advantages
    clipped = np.clip(ratios, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    objective = float(np.minimum(unclipped, clipped).mean())
    loss = -objective * scale

    # d objective / d ratio is the advantage where the raw term is selected
    # and zero where the clip saturates.
    selected = unclipped <= clipped
    d_obj_d_ratio = np.where(selected, advantages, 0.0)
    d_loss_d_logp = -(scale / steps) * d_obj_d_ratio * ratios

    d_means = d_loss_d_logp[:, None] * z / std
    d_log_std = (d_loss_d_logp[:, None] * (z * z - 1.0)).sum(axis=0)
    head_grads, d_hs = head_backward(params, hs, d_means)
    grads = sequence_backward(params, caches, resets, d_hs)
    grads.update(head_grads)
    grads["log_std"] = d_log_std
    return loss, grads, ratios, log_probs


def critic_segment_loss(params: ParamDict, xs, targets, h0, c0, resets,
                        scale: float = 1.0):
    """Mean-squared value error and its gradients for a segment."""
    steps = len(xs)
    hs, _, caches = sequence_forward(params, xs, h0, c0, resets)
    values = head_forward(params, hs)[:, 0]
    err = values - targets
    loss = float(np.mean(err * err)) * scale
    d_values = (2.0 * scale / steps) * err
    head_grads, d_hs = head_backward(params, hs, d_values[:, None])
    grads = sequence_backward(params, caches, resets, d_hs)
    grads.update(head_grads)
    return loss, grads, values


# -- parameter plumbing -------------------------------------------------------


def params_keys(params: ParamDict) -> list[str]:
    return sorted(params.keys())


def params_to_vector(params: ParamDict) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in params_keys(params)])


def vector_to_params(vector: np.ndarray, template: ParamDict) -> ParamDict:
    out = {}
    offset = 0
    for k in params_keys(template):
        size = template[k].size
        out[k] = vector[offset:offset + size].reshape(template[k].shape).copy()
        offset += size
    if offset != vector.size:
        raise ValueError("vector length does not match the parameter template")
    return out


def global_norm(grads: ParamDict) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def clip_by_global_norm(grads: ParamDict, max_norm: float):
    """Rescale all gradients together so their joint norm is at most max_norm."""
    norm = global_norm(grads)
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


def grad_check(params: ParamDict, loss_and_grad, rng: np.random.Generator,
               num_coords: int = 200, step: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_and_grad(params) -> (loss, grads)``; only the loss value is used
    for the perturbed evaluations, so the probe is independent of the
    analytic backward pass.
    """
    _, grads = loss_and_grad(params)
    flat_grads = params_to_vector(grads)
    flat_params = params_to_vector(params)
    n = flat_params.size
    coords = rng.choice(n, size=min(num_coords, n), replace=False)
    worst = 0.0
    for idx in coords:
        bumped = flat_params.copy()
        bumped[idx] += step
        loss_plus, _ = loss_and_grad(vector_to_params(bumped, params))
        bumped[idx] -= 2.0 * step
        loss_minus, _ = loss_and_grad(vector_to_params(bumped, params))
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        analytic = flat_grads[idx]
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
