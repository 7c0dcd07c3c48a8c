"""Task generators and simulators.

Three control benchmarks (spring-mass-damper ``sm``, cart-pole ``cp``,
bicycle tilt ``bk``), 8-joint robot end-effector regression ``robot``, and
two synthetic classification domains ``synth1`` and ``synth2``. Every task
carries a raw descriptor vector built from its generating parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import BadRange, DimensionMismatch, NonFinite

GRAVITY = 9.81
DT = 0.01
HORIZON = 100
N_JOINTS = 8

RL_DOMAINS = ("sm", "cp", "bk")
SUPERVISED_DOMAINS = ("robot", "synth1", "synth2")
DOMAINS = RL_DOMAINS + SUPERVISED_DOMAINS

PARAM_NAMES = {
    "sm": ["mass", "spring", "damping"],
    "cp": ["cart_mass", "pole_mass", "pole_length", "damping"],
    "bk": ["mass", "com_x", "com_z", "wheelbase", "trail", "head_angle"],
}

DEFAULT_RANGES = {
    "sm": {"mass": (0.5, 5.0), "spring": (0.5, 5.0), "damping": (0.5, 5.0)},
    "cp": {"cart_mass": (0.5, 2.0), "pole_mass": (0.1, 1.0),
           "pole_length": (0.2, 1.0), "damping": (0.05, 0.5)},
    "bk": {"mass": (0.5, 2.0), "com_x": (0.2, 0.6), "com_z": (0.5, 1.2),
           "wheelbase": (0.8, 1.2), "trail": (0.05, 0.15), "head_angle": (1.0, 1.4)},
    "robot": {"twist": (-np.pi, np.pi), "length": (0.1, 1.0), "offset": (0.1, 1.0)},
    "synth1": {"m": (-0.5, 0.5)},
}

# episodes start at a fixed displacement from the goal plus uniform jitter of
# half-width INITIAL_STATE_WIDTH per component
INITIAL_STATE = {
    "sm": np.array([1.0, 0.0]),
    "cp": np.array([0.0, 0.0, 0.1, 0.0]),
    "bk": np.array([0.05, 0.0]),
}
INITIAL_STATE_WIDTH = {
    "sm": np.zeros(2),
    "cp": np.zeros(4),
    "bk": np.zeros(2),
}

STATE_DIM = {"sm": 2, "cp": 4, "bk": 2}

ROBOT_JOINT_RANGE = (-np.pi / 4, np.pi / 4)

# synth2 planted structure
SYNTH2_D, SYNTH2_DM, SYNTH2_K, SYNTH2_NNZ = 8, 8, 6, 3


def _robot_names():
    names = []
    for j in range(N_JOINTS):
        names += [f"twist{j}", f"length{j}", f"offset{j}"]
    return names


DESCRIPTOR_NAMES = {
    **PARAM_NAMES,
    "robot": _robot_names(),
    "synth1": [f"m{i}" for i in range(8)],
    "synth2": [f"phi{i}" for i in range(SYNTH2_DM)],
}

DESCRIPTOR_GROUPS = {
    "sm": {"M": [0], "K": [1], "D": [2]},
    "cp": {"C": [0], "P": [1], "L": [2], "D": [3]},
    "robot": {"T": list(range(0, 3 * N_JOINTS, 3)),
              "L": list(range(1, 3 * N_JOINTS, 3)),
              "O": list(range(2, 3 * N_JOINTS, 3))},
}


@dataclass
class TaskSpec:
    id: object
    domain: str
    descriptor_raw: np.ndarray
    params: dict
    data: dict = None
    goal: np.ndarray = None

    @property
    def is_rl(self):
        return self.domain in RL_DOMAINS

    def to_json(self):
        out = {"id": self.id, "domain": self.domain,
               "descriptor_raw": np.asarray(self.descriptor_raw, float).tolist(),
               "params": _jsonable(self.params)}
        if self.data is not None:
            out["data"] = _jsonable(self.data)
        out["goal"] = None if self.goal is None else np.asarray(self.goal, float).tolist()
        return out

    @classmethod
    def from_json(cls, obj):
        data = obj.get("data")
        if data is not None:
            data = {key: np.asarray(val, float) for key, val in data.items()}
        goal = obj.get("goal")
        return cls(
            id=obj["id"],
            domain=obj["domain"],
            descriptor_raw=np.asarray(obj["descriptor_raw"], float),
            params={key: (np.asarray(val, float) if isinstance(val, list) else val)
                    for key, val in obj["params"].items()},
            data=data,
            goal=None if goal is None else np.asarray(goal, float),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {key: _jsonable(val) for key, val in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _check_ranges(ranges):
    for name, (lo, hi) in ranges.items():
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise BadRange(f"empty interval for {name}: [{lo}, {hi}]")


# ---------------------------------------------------------------------------
# dynamics


def accelerations(domain, params, state, action):
    """Second derivatives of the configuration variables.

    ``state`` has shape (..., n); ``action`` broadcasts against state[..., 0].
    """
    p = params
    if domain == "sm":
        x, v = state[..., 0], state[..., 1]
        return ((action - p["spring"] * x - p["damping"] * v) / p["mass"])[..., None]
    if domain == "cp":
        # cart-pole with the pole mass at half length and viscous cart damping;
        # pole angle zero is upright
        xd, th, thd = state[..., 1], state[..., 2], state[..., 3]
        mc, mp = p["cart_mass"], p["pole_mass"]
        half = 0.5 * p["pole_length"]
        total = mc + mp
        force = action - p["damping"] * xd
        sin, cos = np.sin(th), np.cos(th)
        temp = (force + mp * half * thd ** 2 * sin) / total
        thacc = (GRAVITY * sin - cos * temp) / (half * (4.0 / 3.0 - mp * cos ** 2 / total))
        xacc = temp - mp * half * thacc * cos / total
        return np.stack([xacc, thacc], axis=-1)
    if domain == "bk":
        # linearized tilt: phi'' = (g m h phi + kappa u) / (m h^2) with
        # kappa = (trail * sin(head_angle) + com_x) / wheelbase
        phi = state[..., 0]
        m, h = p["mass"], p["com_z"]
        kappa = bike_torque_coupling(p)
        return ((GRAVITY * m * h * phi + kappa * action) / (m * h * h))[..., None]
    raise ValueError(f"no dynamics for domain {domain!r}")


def bike_torque_coupling(params):
    return (params["trail"] * np.sin(params["head_angle"]) + params["com_x"]) / params["wheelbase"]


def integrate(domain, params, state, action, dt=DT):
    """One semi-implicit Euler step: velocities first, then positions."""
    state = np.asarray(state, float)
    acc = accelerations(domain, params, state, action)
    nxt = np.empty_like(state)
    vel = state[..., 1::2] + dt * acc
    nxt[..., 1::2] = vel
    nxt[..., 0::2] = state[..., 0::2] + dt * vel
    return nxt


def step(params, state, action, dt=DT, domain=None, goal=None):
    """Advance one state and return ``(next_state, reward)``.

    The reward is the negative Euclidean distance of the next state to the
    goal (the origin unless given).
    """
    if isinstance(params, TaskSpec):
        domain, goal, params = params.domain, params.goal if goal is None else goal, params.params
    if domain not in STATE_DIM:
        raise ValueError(f"step needs a control domain, got {domain!r}")
    state = np.asarray(state, float)
    if state.shape != (STATE_DIM[domain],):
        raise DimensionMismatch(f"{domain} expects a state of length {STATE_DIM[domain]}")
    with np.errstate(over="ignore", invalid="ignore"):
        nxt = integrate(domain, params, state, float(action), dt)
    if not np.all(np.isfinite(nxt)):
        raise NonFinite(f"{domain} state diverged")
    goal = np.zeros_like(nxt) if goal is None else np.asarray(goal, float)
    return nxt, -float(distance(nxt - goal))


def distance(diff):
    """Euclidean norm over the last axis that does not overflow for huge finite states."""
    scale = np.max(np.abs(diff), axis=-1, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    return (safe * np.linalg.norm(diff / safe, axis=-1, keepdims=True))[..., 0]


def mechanical_energy(params, state):
    """Spring-mass energy 0.5 m v^2 + 0.5 k x^2."""
    x, v = state[..., 0], state[..., 1]
    return 0.5 * params["mass"] * v ** 2 + 0.5 * params["spring"] * x ** 2


@dataclass
class Rollouts:
    """A batch of trajectories; arrays are (n_traj, H, ...)."""

    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    noise: np.ndarray

    @property
    def returns(self):
        return self.rewards.mean(axis=1)


def initial_states(task, n, rng):
    width = INITIAL_STATE_WIDTH[task.domain]
    start = INITIAL_STATE[task.domain]
    return start + rng.uniform(-1.0, 1.0, size=(n, width.size)) * width


def policy_features(task, states):
    """Linear-policy inputs: the state error relative to the goal."""
    goal = np.zeros(states.shape[-1]) if task.goal is None else task.goal
    return states - goal


def simulate(task, theta, n_traj, horizon, sigma, rng, dt=DT):
    """Roll out the Gaussian linear policy ``a = theta'x + sigma * eps``.

    Trajectories whose state leaves the finite range are frozen at their
    last finite state for the rest of the horizon.
    """
    theta = np.asarray(theta, float)
    d = STATE_DIM[task.domain]
    if theta.shape != (d,):
        raise DimensionMismatch(f"{task.domain} policy needs {d} parameters, got {theta.shape}")
    states = initial_states(task, n_traj, rng)
    noise = rng.standard_normal((n_traj, horizon))
    goal = np.zeros(d) if task.goal is None else task.goal
    feats = np.empty((n_traj, horizon, d))
    actions = np.empty((n_traj, horizon))
    rewards = np.empty((n_traj, horizon))
    with np.errstate(over="ignore", invalid="ignore"):
        for h in range(horizon):
            x = states - goal
            a = x @ theta + sigma * noise[:, h]
            nxt = integrate(task.domain, task.params, states, a, dt)
            bad = ~np.all(np.isfinite(nxt), axis=1)
            if bad.any():
                nxt[bad] = states[bad]
            feats[:, h] = x
            actions[:, h] = a
            rewards[:, h] = -distance(nxt - goal)
            states = nxt
    return Rollouts(feats, actions, rewards, noise)


# ---------------------------------------------------------------------------
# robot arm


def dh_transform(twist, length, offset, angle):
    ct, st = np.cos(angle), np.sin(angle)
    ca, sa = np.cos(twist), np.sin(twist)
    return np.array([
        [ct, -st * ca, st * sa, length * ct],
        [st, ct * ca, -ct * sa, length * st],
        [0.0, sa, ca, offset],
        [0.0, 0.0, 0.0, 1.0],
    ])


def robot_fk(params, joint_angles):
    """End-effector position of a serial arm under the standard DH convention."""
    angles = np.asarray(joint_angles, float)
    twists = np.asarray(params["twist"], float)
    if angles.shape != twists.shape:
        raise DimensionMismatch(f"{twists.size} joints but {angles.size} angles")
    T = np.eye(4)
    for alpha, a, d, q in zip(twists, params["length"], params["offset"], angles):
        T = T @ dh_transform(alpha, a, d, q)
    return T[:3, 3].copy()


def robot_features(angles):
    """[sin(q), cos(q), 1] per configuration."""
    angles = np.atleast_2d(angles)
    return np.hstack([np.sin(angles), np.cos(angles), np.ones((angles.shape[0], 1))])


def robot_descriptor(params):
    return np.column_stack([params["twist"], params["length"], params["offset"]]).ravel()


def make_robot_task(params, n_points, seed, n_test=100, task_id=0):
    """Regression task: predict the 3-D end-effector position from joint angles."""
    if n_points < 1:
        raise ValueError("n_points must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = ROBOT_JOINT_RANGE

    def sample(n):
        angles = rng.uniform(lo, hi, size=(n, N_JOINTS))
        pos = np.array([robot_fk(params, q) for q in angles]).reshape(n, 3)
        return angles, pos

    angles, pos = sample(n_points)
    test_angles, test_pos = sample(n_test)
    data = {
        "X": robot_features(angles), "y": pos.ravel(), "angles": angles,
        "X_test": robot_features(test_angles), "y_test": test_pos.ravel(),
        "angles_test": test_angles,
    }
    params = {key: np.asarray(val, float) for key, val in params.items()}
    return TaskSpec(task_id, "robot", robot_descriptor(params), params, data)


# ---------------------------------------------------------------------------
# domain generation


def synth2_factors(planted_seed=0, d=SYNTH2_D, d_m=SYNTH2_DM, k=SYNTH2_K):
    """Planted model and descriptor bases shared by every synth2 task."""
    rng = np.random.default_rng(planted_seed)
    return rng.standard_normal((d, k)), rng.standard_normal((d_m, k))


def generate_domain(tag, count, seed, ranges=None, n_samples=10, n_test=200,
                    planted_seed=0, nnz=SYNTH2_NNZ):
    """Draw ``count`` tasks of one domain; the same arguments give the same list.

    ``ranges`` overrides the default per-parameter sampling intervals.
    synth2 tasks share planted bases drawn from ``planted_seed`` so that
    training and held-out suites generated with different seeds are related.
    """
    if tag not in DOMAINS:
        raise ValueError(f"unknown domain {tag!r}")
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    bounds = {**DEFAULT_RANGES.get(tag, {}), **(ranges or {})}
    _check_ranges(bounds)
    tasks = []

    if tag in RL_DOMAINS:
        for i in range(count):
            params = {name: float(rng.uniform(*bounds[name])) for name in PARAM_NAMES[tag]}
            desc = np.array([params[name] for name in PARAM_NAMES[tag]])
            tasks.append(TaskSpec(i, tag, desc, params, goal=np.zeros(STATE_DIM[tag])))
    elif tag == "robot":
        for i in range(count):
            params = {
                "twist": rng.uniform(*bounds["twist"], size=N_JOINTS),
                "length": rng.uniform(*bounds["length"], size=N_JOINTS),
                "offset": rng.uniform(*bounds["offset"], size=N_JOINTS),
            }
            task_seed = int(rng.integers(2**63))
            tasks.append(make_robot_task(params, n_samples, task_seed, n_test=n_test, task_id=i))
    elif tag == "synth1":
        for i in range(count):
            m = rng.uniform(*bounds["m"], size=8)
            X = rng.uniform(-1.0, 1.0, size=(n_samples, 8))
            X_test = rng.uniform(-1.0, 1.0, size=(n_test, 8))
            data = {"X": X, "y": _sign(X @ m), "X_test": X_test, "y_test": _sign(X_test @ m)}
            tasks.append(TaskSpec(i, tag, m, {"m": m}, data))
    else:
        L, D = synth2_factors(planted_seed)
        k = L.shape[1]
        for i in range(count):
            s = np.zeros(k)
            support = np.sort(rng.choice(k, size=nnz, replace=False))
            s[support] = rng.standard_normal(nnz)
            theta = L @ s
            X = rng.standard_normal((n_samples, L.shape[0]))
            X_test = rng.standard_normal((n_test, L.shape[0]))
            data = {"X": X, "y": _sign(X @ theta), "X_test": X_test, "y_test": _sign(X_test @ theta)}
            tasks.append(TaskSpec(i, tag, D @ s, {"s": s, "planted_seed": planted_seed}, data))
    return tasks


def _sign(v):
    # labels in {+1, -1}; the measure-zero tie goes to -1
    return np.where(v > 0, 1.0, -1.0)


def descriptor_features(task, mask=None, scale=None):
    """phi(m): the raw descriptor, optionally subset and min-max scaled.

    ``scale`` is a pair of (lo, hi) arrays taken from the generation ranges.
    """
    phi = np.asarray(task.descriptor_raw, float)
    if scale is not None:
        lo, hi = scale
        span = np.where(hi > lo, hi - lo, 1.0)
        phi = (phi - lo) / span
    if mask is not None:
        phi = phi[np.asarray(mask, bool)]
    return phi


def generation_scale(tag, ranges=None):
    """Per-descriptor (lo, hi) bounds implied by the generation ranges."""
    bounds = {**DEFAULT_RANGES.get(tag, {}), **(ranges or {})}
    if tag in RL_DOMAINS:
        lo = np.array([bounds[n][0] for n in PARAM_NAMES[tag]])
        hi = np.array([bounds[n][1] for n in PARAM_NAMES[tag]])
    elif tag == "robot":
        per = np.array([bounds["twist"], bounds["length"], bounds["offset"]])
        lo, hi = np.tile(per[:, 0], N_JOINTS), np.tile(per[:, 1], N_JOINTS)
    elif tag == "synth1":
        lo, hi = np.full(8, bounds["m"][0]), np.full(8, bounds["m"][1])
    else:
        return None
    return lo, hi


def group_mask(domain, groups):
    """Boolean descriptor mask selecting the named groups (e.g. "MK")."""
    table = DESCRIPTOR_GROUPS[domain]
    mask = np.zeros(len(DESCRIPTOR_NAMES[domain]), bool)
    for g in groups:
        mask[table[g]] = True
    return mask


@dataclass
class DomainInfo:
    """Dimensions of a domain's model and descriptor spaces."""

    model_dim: int
    descriptor_dim: int
    kind: str
    extra: dict = field(default_factory=dict)


def domain_info(tag):
    if tag in RL_DOMAINS:
        return DomainInfo(STATE_DIM[tag], len(PARAM_NAMES[tag]), "rl")
    if tag == "robot":
        return DomainInfo(3 * (2 * N_JOINTS + 1), 3 * N_JOINTS, "regression")
    if tag == "synth1":
        return DomainInfo(8, 8, "classification")
    return DomainInfo(SYNTH2_D, SYNTH2_DM, "classification")
