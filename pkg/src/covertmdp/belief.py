"""Observer-side inference: observation model, recursive Bayesian filter,
prohibited/admissible action sets, and the joint state-belief transition law.

The observer cannot see actions. It filters against the Markov chain induced
by the nominal policy, so the filter map depends only on that chain ``pa``
and the likelihood table. An action of the controlled agent is *prohibited*
at ``(x, o)`` when it could generate an observation to which the observer's
one-step predictive assigns (numerically) zero probability; such an
observation would make the filter update undefined and reveal the deviation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IllDefinedUpdate, ModelFormatError, ProhibitedAction
from .mdp import MdpModel, _readonly

# Threshold below which a probability is treated as an exact zero. All
# quantities compared against it are finite sums of products of model
# probabilities, so true zeros carry only accumulated rounding noise.
EPS_ZERO = 1e-12

# Atoms whose beliefs agree to within this l-inf distance (and share the
# successor state) are merged. Implemented by matching beliefs rounded to
# 9 decimals, which merges all exact duplicates and is conservative for
# near-duplicates.
EPS_MERGE = 1e-9

BELIEF_L1_TOL = 1e-9


@dataclass(frozen=True)
class ObservationModel:
    """Likelihood table ``likelihood[y, x] = q(y | x)``; columns sum to 1."""

    num_observations: int
    likelihood: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "likelihood", _readonly(self.likelihood))


def validate_observation_model(obs: ObservationModel, num_states: int) -> list[str]:
    out: list[str] = []
    k = obs.num_observations
    if k < 1:
        return [f"num_observations must be positive, got {k}"]
    if obs.likelihood.shape != (k, num_states):
        return [
            f"likelihood shape {obs.likelihood.shape} != expected {(k, num_states)}"
        ]
    q = obs.likelihood
    if np.any(q < 0.0) or np.any(q > 1.0):
        y, x = np.argwhere((q < 0.0) | (q > 1.0))[0]
        out.append(f"likelihood q({y}|{x}) = {q[y, x]!r} outside [0, 1]")
    sums = q.sum(axis=0)
    for x in np.flatnonzero(np.abs(sums - 1.0) > 1e-12):
        out.append(f"likelihood column x={x} sums to {sums[x]!r}, not 1")
    return out


def make_belief(probs) -> np.ndarray:
    """Validate and renormalize a belief vector.

    Accepts vectors whose l1 mass deviates from 1 by at most ``BELIEF_L1_TOL``
    (drift from long filter runs); larger deviations or negative entries are
    rejected so genuine bugs are not papered over.
    """
    o = np.asarray(probs, dtype=float).copy()
    if o.ndim != 1:
        raise ValueError(f"belief must be a vector, got shape {o.shape}")
    if np.any(o < -EPS_ZERO) or np.any(o > 1.0 + BELIEF_L1_TOL):
        raise ValueError(f"belief entries outside [0, 1]: {o!r}")
    total = o.sum()
    if abs(total - 1.0) > BELIEF_L1_TOL:
        raise ValueError(f"belief mass {total!r} deviates from 1 beyond tolerance")
    np.clip(o, 0.0, None, out=o)
    o /= o.sum()
    o.setflags(write=False)
    return o


def uniform_belief(num_states: int) -> np.ndarray:
    return make_belief(np.full(num_states, 1.0 / num_states))


def point_belief(num_states: int, x: int) -> np.ndarray:
    o = np.zeros(num_states)
    o[x] = 1.0
    return make_belief(o)


def observation_predictive(pa: np.ndarray, q: np.ndarray, o: np.ndarray) -> np.ndarray:
    """One-step predictive observation distribution, a vector over Y."""
    return q @ (pa @ o)


def predicted_obs_prob(pa: np.ndarray, q: np.ndarray, o: np.ndarray, y: int) -> float:
    """Probability the observer's model assigns to seeing ``y`` next."""
    return float(q[y] @ (pa @ o))


def bayes_update(pa: np.ndarray, q: np.ndarray, o: np.ndarray, y: int) -> np.ndarray:
    """One predict-update step of the observer's filter.

    Raises :class:`IllDefinedUpdate` when the predictive probability of ``y``
    is numerically zero; callers prevent that by restricting the agent to
    admissible actions.
    """
    numer = q[y] * (pa @ o)
    denom = numer.sum()
    if denom <= EPS_ZERO:
        raise IllDefinedUpdate(
            f"observation y={y} has predictive probability {denom!r}"
        )
    post = numer / denom
    post.setflags(write=False)
    return post


def posterior_table(
    pa: np.ndarray, q: np.ndarray, o: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """All one-step posteriors at once.

    Returns ``(posteriors, predictive)`` where ``posteriors[y]`` is the updated
    belief after observing ``y`` (rows with predictive mass <= EPS_ZERO are
    left as zeros and must not be used) and ``predictive`` is the observation
    distribution.
    """
    pred_states = pa @ o
    numer = q * pred_states[None, :]
    predictive = numer.sum(axis=1)
    safe = predictive > EPS_ZERO
    posteriors = np.zeros_like(numer)
    posteriors[safe] = numer[safe] / predictive[safe, None]
    return posteriors, predictive


def ego_observation_table(model: MdpModel, obs: ObservationModel) -> np.ndarray:
    """Table ``t[y, x, u]``: probability the agent's next state emits ``y``."""
    return np.einsum("yd,dxu->yxu", obs.likelihood, model.transition)


def prohibited_actions(
    model: MdpModel,
    obs: ObservationModel,
    pa: np.ndarray,
    x: int,
    o: np.ndarray,
) -> set[int]:
    """Actions at ``(x, o)`` that could surprise the observer.

    ``u`` is prohibited iff some observation has positive probability under
    the agent's true successor distribution but numerically zero probability
    under the observer's predictive.
    """
    predictive = observation_predictive(pa, obs.likelihood, o)
    agent_obs = obs.likelihood @ model.transition[:, x, :]  # (Y, U)
    bad = (agent_obs > EPS_ZERO) & (predictive <= EPS_ZERO)[:, None]
    return set(np.flatnonzero(bad.any(axis=0)).tolist())


def admissible_actions(
    model: MdpModel,
    obs: ObservationModel,
    pa: np.ndarray,
    x: int,
    o: np.ndarray,
) -> list[int]:
    """Complement of :func:`prohibited_actions`, sorted ascending."""
    banned = prohibited_actions(model, obs, pa, x, o)
    return [u for u in range(model.num_actions) if u not in banned]


def stage_penalty(x: int, o: np.ndarray) -> float:
    """Observer's current belief in the agent's true state."""
    return float(o[x])


@dataclass(frozen=True)
class AugmentedSupport:
    """Finite support of the joint (state, belief) transition law.

    Parallel arrays: atom ``i`` moves the pair to state ``states[i]`` with
    belief ``beliefs[i]`` and probability ``probs[i]``. Probabilities sum
    to 1 and there are at most |X| * |Y| atoms.
    """

    states: np.ndarray
    beliefs: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _readonly(self.states, dtype=np.int64))
        object.__setattr__(self, "beliefs", _readonly(self.beliefs))
        object.__setattr__(self, "probs", _readonly(self.probs))

    @property
    def atoms(self) -> list[tuple[int, np.ndarray, float]]:
        return [
            (int(s), b, float(p))
            for s, b, p in zip(self.states, self.beliefs, self.probs)
        ]


def _merge_keys(states: np.ndarray, beliefs: np.ndarray) -> list[tuple[int, bytes]]:
    # +0.0 canonicalizes any -0.0 produced by rounding
    rounded = np.round(beliefs, 9) + 0.0
    return [(int(s), rounded[i].tobytes()) for i, s in enumerate(states)]


def merge_atoms(
    states: np.ndarray, beliefs: np.ndarray, probs: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sum probabilities of atoms that share (state, belief) up to EPS_MERGE.

    The first occurrence's belief vector is kept for each merged group, so
    merged beliefs differ from any constituent by at most the merge radius.
    """
    order: dict[tuple[int, bytes], int] = {}
    keep_idx: list[int] = []
    acc: list[float] = []
    for i, key in enumerate(_merge_keys(states, beliefs)):
        j = order.get(key)
        if j is None:
            order[key] = len(keep_idx)
            keep_idx.append(i)
            acc.append(float(probs[i]))
        else:
            acc[j] += float(probs[i])
    sel = np.asarray(keep_idx, dtype=np.int64)
    return states[sel], beliefs[sel], np.asarray(acc)


def augmented_transition_support(
    model: MdpModel,
    obs: ObservationModel,
    pa: np.ndarray,
    x: int,
    o: np.ndarray,
    u: int,
) -> AugmentedSupport:
    """Closed-form support of the joint (state, belief) transition.

    Enumerates one atom per (successor state, observation) pair with
    positive probability; the successor belief for observation ``y`` is the
    filter update, shared across successor states. Raises
    :class:`ProhibitedAction` when ``u`` is not admissible at ``(x, o)``.
    """
    q = obs.likelihood
    posteriors, predictive = posterior_table(pa, q, o)
    succ = model.transition[:, x, u]
    mass = q * succ[None, :]  # (Y, X'): q(y|x') p(x'|x,u)
    realizable = mass.sum(axis=1) > EPS_ZERO
    blocked = realizable & (predictive <= EPS_ZERO)
    if np.any(blocked):
        y = int(np.flatnonzero(blocked)[0])
        raise ProhibitedAction(
            f"action u={u} at state x={x} can emit observation y={y} "
            f"which the observer's predictive rules out"
        )
    ys, xps = np.nonzero(mass > 0.0)
    usable = realizable[ys]
    ys, xps = ys[usable], xps[usable]
    states, beliefs, probs = merge_atoms(xps, posteriors[ys], mass[ys, xps])
    return AugmentedSupport(states, beliefs, probs)


# ---------------------------------------------------------------------------
# observation model files

_OBS_KEYS = {"num_observations", "likelihood"}


def observation_from_dict(doc: dict, num_states: int | None = None) -> ObservationModel:
    missing = _OBS_KEYS - doc.keys()
    if missing:
        raise ModelFormatError([f"missing field {k!r}" for k in sorted(missing)])
    unknown = doc.keys() - _OBS_KEYS
    if unknown:
        raise ModelFormatError([f"unknown field {k!r}" for k in sorted(unknown)])
    try:
        likelihood = np.asarray(doc["likelihood"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError([f"non-numeric likelihood: {exc}"]) from exc
    if likelihood.ndim != 2:
        raise ModelFormatError(
            [f"likelihood must be nested [observation][state], got ndim={likelihood.ndim}"]
        )
    obs = ObservationModel(int(doc["num_observations"]), likelihood)
    n = likelihood.shape[1] if num_states is None else num_states
    problems = validate_observation_model(obs, n)
    if problems:
        raise ModelFormatError(problems)
    return obs


def load_observation_file(path: str | Path, num_states: int | None = None) -> ObservationModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ModelFormatError(["top-level document must be an object"])
    return observation_from_dict(doc, num_states)


def save_observation_file(obs: ObservationModel, path: str | Path) -> None:
    doc = {
        "num_observations": obs.num_observations,
        "likelihood": obs.likelihood.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
