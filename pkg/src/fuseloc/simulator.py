"""Synthetic multi-modal recordings over a multi-room floorplan.

A wheeled platform drives a jittered circuit through four rooms; every
sample carries RSSI and CSI per Wi-Fi anchor, range/power per UWB
anchor, and 9-axis inertial data, all generated from simple physical
models with seeded noise. The lower-left room has no line of sight to
any UWB anchor, so UWB quality collapses there by construction.

All randomness flows from a single seed through named child streams,
so toggling one noise source never desynchronizes the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .curation import Recording


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class Wall:
    x1: float
    y1: float
    x2: float
    y2: float


def _cross2(ux, uy, vx, vy):
    return ux * vy - uy * vx


def _orient(a, b, c):
    """Signed area of triangle abc; zero means collinear."""
    return _cross2(b[0] - a[0], b[1] - a[1], c[0] - a[0], c[1] - a[1])


def _on_segment(a, q, b) -> bool:
    """Whether collinear point q lies within the bounding box of segment ab."""
    return (min(a[0], b[0]) <= q[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= q[1] <= max(a[1], b[1]))


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Closed-segment intersection; collinear touching counts."""
    o1 = _orient(p1, p2, q1)
    o2 = _orient(p1, p2, q2)
    o3 = _orient(q1, q2, p1)
    o4 = _orient(q1, q2, p2)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True
    if o1 == 0 and _on_segment(p1, q1, p2):
        return True
    if o2 == 0 and _on_segment(p1, q2, p2):
        return True
    if o3 == 0 and _on_segment(q1, p1, q2):
        return True
    if o4 == 0 and _on_segment(q1, p2, q2):
        return True
    return False


def is_nlos(position, anchor, walls) -> bool:
    """True iff the sight line from position to anchor crosses any wall."""
    p = (float(position[0]), float(position[1]))
    a = (float(anchor[0]), float(anchor[1]))
    if p == a:
        return False
    for w in walls:
        if segments_intersect(p, a, (w.x1, w.y1), (w.x2, w.y2)):
            return True
    return False


def nlos_mask(positions: np.ndarray, anchor, walls) -> np.ndarray:
    """Vectorized ``is_nlos`` for an (N, 2) array of positions."""
    p = np.asarray(positions, dtype=np.float64)
    a = np.asarray(anchor, dtype=np.float64)
    n = p.shape[0]
    blocked = np.zeros(n, dtype=bool)
    same = np.all(p == a, axis=1)
    d = a - p
    lo_pa, hi_pa = np.minimum(p, a), np.maximum(p, a)
    for w in walls:
        q1 = np.array([w.x1, w.y1])
        q2 = np.array([w.x2, w.y2])
        e = q2 - q1
        o1 = _cross2(d[:, 0], d[:, 1], q1[0] - p[:, 0], q1[1] - p[:, 1])
        o2 = _cross2(d[:, 0], d[:, 1], q2[0] - p[:, 0], q2[1] - p[:, 1])
        o3 = _cross2(e[0], e[1], p[:, 0] - q1[0], p[:, 1] - q1[1])
        o4 = float(_cross2(e[0], e[1], a[0] - q1[0], a[1] - q1[1]))
        touch = (o1 == 0) & np.all((lo_pa <= q1) & (q1 <= hi_pa), axis=1)
        touch |= (o2 == 0) & np.all((lo_pa <= q2) & (q2 <= hi_pa), axis=1)
        lo_q, hi_q = np.minimum(q1, q2), np.maximum(q1, q2)
        touch |= (o3 == 0) & np.all((lo_q <= p) & (p <= hi_q), axis=1)
        if o4 == 0 and np.all((lo_q <= a) & (a <= hi_q)):
            touch |= True
        blocked |= ((o1 * o2 < 0) & (o3 * o4 < 0)) | touch
    blocked[same] = False
    return blocked


@dataclass
class Floorplan:
    """Bounded area with interior walls and fixed anchor positions."""

    bounds: tuple[float, float] = (8.0, 8.0)
    walls: list[Wall] = field(default_factory=list)
    wifi_anchors: np.ndarray = None
    uwb_anchors: np.ndarray = None

    def __post_init__(self):
        if self.wifi_anchors is None:
            self.wifi_anchors = np.zeros((0, 2))
        if self.uwb_anchors is None:
            self.uwb_anchors = np.zeros((0, 2))
        self.wifi_anchors = np.asarray(self.wifi_anchors, dtype=np.float64)
        self.uwb_anchors = np.asarray(self.uwb_anchors, dtype=np.float64)
        w, h = self.bounds
        for arr in (self.wifi_anchors, self.uwb_anchors):
            if arr.size and not (np.all(arr >= 0) and np.all(arr[:, 0] <= w)
                                 and np.all(arr[:, 1] <= h)):
                raise ValueError("anchors must lie inside the floorplan bounds")


def floorplan_to_dict(plan: Floorplan) -> dict:
    return {
        "bounds": list(plan.bounds),
        "walls": [[w.x1, w.y1, w.x2, w.y2] for w in plan.walls],
        "wifi_anchors": plan.wifi_anchors.tolist(),
        "uwb_anchors": plan.uwb_anchors.tolist(),
    }


def floorplan_from_dict(doc: dict) -> Floorplan:
    return Floorplan(
        bounds=tuple(doc["bounds"]),
        walls=[Wall(*w) for w in doc["walls"]],
        wifi_anchors=np.asarray(doc["wifi_anchors"], dtype=np.float64),
        uwb_anchors=np.asarray(doc["uwb_anchors"], dtype=np.float64),
    )


def default_floorplan() -> Floorplan:
    """Four 4x4 m rooms in an 8x8 m square, doors cut into the dividers.

    The lower-left room's doors sit near (4, 2) and (2, 4); all three
    UWB anchors live in the upper-right room, so no sight line from the
    lower-left room reaches any of them.
    """
    door = 0.25  # half-width of a door gap
    walls = [
        # vertical divider x=4 with doors at y=2 (LL-LR) and y=6 (UL-UR)
        Wall(4.0, 0.0, 4.0, 2.0 - door),
        Wall(4.0, 2.0 + door, 4.0, 6.0 - door),
        Wall(4.0, 6.0 + door, 4.0, 8.0),
        # horizontal divider y=4 with doors at x=2 (LL-UL) and x=6 (LR-UR)
        Wall(0.0, 4.0, 2.0 - door, 4.0),
        Wall(2.0 + door, 4.0, 6.0 - door, 4.0),
        Wall(6.0 + door, 4.0, 8.0, 4.0),
    ]
    wifi = np.array([
        [0.5, 0.5], [0.5, 4.0], [0.5, 7.5],
        [4.0, 0.5], [4.0, 7.5],
        [7.5, 0.5], [7.5, 4.0], [7.5, 7.5],
        [2.0, 2.0], [6.0, 6.0], [3.0, 5.0],
    ])
    # clustered deep in the upper-right room: no sight corridor through any
    # door pair reaches them from the lower-left room
    uwb = np.array([[7.5, 7.5], [6.5, 7.5], [7.5, 6.5]])
    return Floorplan(bounds=(8.0, 8.0), walls=walls, wifi_anchors=wifi, uwb_anchors=uwb)


def open_floorplan() -> Floorplan:
    """Wall-free variant: everything is line of sight and UWB anchors are
    spread so no trajectory point is further than the 10 m range clip."""
    plan = default_floorplan()
    return Floorplan(bounds=plan.bounds, walls=[],
                     wifi_anchors=plan.wifi_anchors,
                     uwb_anchors=np.array([[1.0, 1.0], [7.0, 1.0], [4.0, 7.0]]))


# ---------------------------------------------------------------------------
# trajectory


@dataclass
class Trajectory:
    """Constant-speed path sampled at a fixed rate.

    Velocity is the forward difference of position times the rate, and
    acceleration the forward difference of velocity, so the stored
    kinematics are consistent by construction.
    """

    positions: np.ndarray    # (N, 2)
    speed: float
    sample_rate: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate

    @property
    def velocities(self) -> np.ndarray:
        v = np.diff(self.positions, axis=0) * self.sample_rate
        return np.vstack([v, v[-1:]])

    @property
    def accelerations(self) -> np.ndarray:
        a = np.diff(self.velocities, axis=0) * self.sample_rate
        return np.vstack([a, a[-1:]])

    @property
    def headings(self) -> np.ndarray:
        v = self.velocities
        return np.arctan2(v[:, 1], v[:, 0])


def _circuit_waypoints(rng: np.random.Generator) -> np.ndarray:
    """One jittered lap through all four rooms via the door gaps."""
    room_jitter, door_jitter = 0.5, 0.12
    base = [
        ((2.0, 2.0), room_jitter),   # lower-left room
        ((4.0, 2.0), door_jitter),   # LL-LR door
        ((6.0, 2.0), room_jitter),   # lower-right room
        ((6.0, 4.0), door_jitter),   # LR-UR door
        ((6.0, 6.0), room_jitter),   # upper-right room
        ((4.0, 6.0), door_jitter),   # UR-UL door
        ((2.0, 6.0), room_jitter),   # upper-left room
        ((2.0, 4.0), door_jitter),   # UL-LL door
    ]
    pts = []
    for (x, y), j in base:
        dx, dy = rng.uniform(-j, j, 2)
        pts.append((x + dx, y + dy))
    return np.asarray(pts)


def circuit_trajectory(n_samples: int, speed: float, sample_rate: float,
                       rng: np.random.Generator) -> Trajectory:
    """Sample a multi-lap circuit at constant speed and rate.

    Waypoints accumulate lap by lap (each lap jittered independently)
    until the polyline is long enough, then positions fall at equal
    arclength increments of speed/rate.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if speed <= 0 or sample_rate <= 0:
        raise ValueError("speed and sample_rate must be positive")
    step = speed / sample_rate
    needed = n_samples * step
    waypoints = [_circuit_waypoints(rng)]
    length = np.linalg.norm(np.diff(waypoints[0], axis=0), axis=1).sum()
    while length < needed:
        lap = _circuit_waypoints(rng)
        length += np.linalg.norm(lap[0] - waypoints[-1][-1])
        length += np.linalg.norm(np.diff(lap, axis=0), axis=1).sum()
        waypoints.append(lap)
    poly = np.vstack(waypoints)
    seg_len = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.arange(n_samples) * step
    positions = np.column_stack([np.interp(s, arc, poly[:, 0]),
                                 np.interp(s, arc, poly[:, 1])])
    return Trajectory(positions, speed, sample_rate)


# ---------------------------------------------------------------------------
# measurement models


@dataclass
class SimConfig:
    """Everything that shapes a synthetic recording except the floorplan."""

    n_samples: int = 2000
    sample_rate: float = 10.0
    speed: float = 0.5
    seed: int = 0
    n_subcarriers: int = 64
    # radio model
    ref_power_dbm: float = -40.0      # received power at 1 m
    path_loss_exponent: float = 2.0
    rssi_shadowing_db: float = 2.0
    rssi_nlos_penalty_db: float = 8.0
    rssi_dropout: float = 0.1
    csi_noise: float = 0.02
    agc_gain_range: tuple[float, float] = (0.5, 2.0)
    uwb_range_sigma_m: float = 0.05
    uwb_nlos_bias_m: float = 0.5
    uwb_nlos_dropout: float = 0.5
    uwb_power_sigma_db: float = 1.0
    uwb_nlos_power_penalty_db: float = 12.0
    imu_accel_sigma: float = 0.05
    imu_gyro_sigma: float = 0.01
    imu_mag_sigma: float = 0.5
    # streams listed here emit position-independent noise (sensor failure)
    pure_noise_sensors: tuple[str, ...] = ()
    open_plan: bool = False  # drop interior walls (pure line of sight)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agc_gain_range"] = list(self.agc_gain_range)
        d["pure_noise_sensors"] = list(self.pure_noise_sensors)
        return d


def _child_rngs(seed: int, names: tuple[str, ...]) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def path_loss_dbm(distance_m: np.ndarray, ref_power_dbm: float, exponent: float) -> np.ndarray:
    """Log-distance received power, referenced to 1 m."""
    d = np.maximum(np.asarray(distance_m, dtype=np.float64), 0.01)
    return ref_power_dbm - 10.0 * exponent * np.log10(d)


def gen_measurements(trajectory: Trajectory, floorplan: Floorplan,
                     config: SimConfig) -> Recording:
    """Simulate every sensor along a trajectory; deterministic per seed."""
    rngs = _child_rngs(config.seed, ("rssi", "csi_taps", "csi_noise", "agc",
                                     "uwb", "imu", "dropout", "corrupt"))
    pos = trajectory.positions
    n = len(trajectory)
    l_w = floorplan.wifi_anchors.shape[0]
    l_u = floorplan.uwb_anchors.shape[0]
    n_c = config.n_subcarriers

    # Wi-Fi: distances and NLOS state per anchor
    wifi_d = np.stack([np.linalg.norm(pos - a, axis=1) for a in floorplan.wifi_anchors], axis=1)
    wifi_nlos = np.stack([nlos_mask(pos, a, floorplan.walls)
                          for a in floorplan.wifi_anchors], axis=1)
    rssi = path_loss_dbm(wifi_d, config.ref_power_dbm, config.path_loss_exponent)
    rssi = rssi - config.rssi_nlos_penalty_db * wifi_nlos
    if config.rssi_shadowing_db > 0:
        rssi = rssi + rngs["rssi"].normal(0.0, config.rssi_shadowing_db, rssi.shape)

    # CSI: per-anchor response of a distance-dependent direct tap plus two
    # static reflections, scaled by a random per-capture receiver gain
    signed = np.arange(-(n_c // 2), n_c - n_c // 2)
    tap_rng = rngs["csi_taps"]
    csi = np.empty((n, l_w, n_c), dtype=np.complex128)
    gains = rngs["agc"].uniform(*config.agc_gain_range, (n, l_w))
    for a in range(l_w):
        delays = np.array([0.0, tap_rng.uniform(0.5, 3.0), tap_rng.uniform(3.0, 6.0)])
        amps = np.array([1.0, tap_rng.uniform(0.2, 0.4), tap_rng.uniform(0.05, 0.2)])
        phases = tap_rng.uniform(0, 2 * np.pi, 3)
        direct_gain = 10 ** (path_loss_dbm(wifi_d[:, a], 0.0,
                                           config.path_loss_exponent) / 20.0)
        direct_gain = direct_gain * np.where(wifi_nlos[:, a], 0.3, 1.0)
        tap_delay = delays[None, :] + np.stack(
            [wifi_d[:, a] / 15.0, np.zeros(n), np.zeros(n)], axis=1)
        tap_amp = amps[None, :] * np.stack(
            [direct_gain, direct_gain * 0.8, direct_gain * 0.6], axis=1)
        phase = (-2j * np.pi / n_c) * signed[None, None, :] * tap_delay[:, :, None]
        response = (tap_amp[:, :, None] *
                    np.exp(phase + 1j * phases[None, :, None])).sum(axis=1)
        csi[:, a, :] = np.fft.ifftshift(response, axes=-1)
    if config.csi_noise > 0:
        scale = np.mean(np.abs(csi)) * config.csi_noise
        noise = rngs["csi_noise"].normal(0.0, scale, (n, l_w, n_c, 2))
        csi = csi + noise[..., 0] + 1j * noise[..., 1]
    csi *= gains[:, :, None]

    # UWB: true range plus noise, NLOS bias, and NLOS dropout
    uwb_d = np.stack([np.linalg.norm(pos - a, axis=1) for a in floorplan.uwb_anchors], axis=1)
    uwb_nlos = np.stack([nlos_mask(pos, a, floorplan.walls)
                         for a in floorplan.uwb_anchors], axis=1)
    uwb_range = uwb_d + config.uwb_nlos_bias_m * uwb_nlos
    if config.uwb_range_sigma_m > 0:
        uwb_range = uwb_range + rngs["uwb"].normal(0.0, config.uwb_range_sigma_m,
                                                   uwb_range.shape)
    uwb_power = path_loss_dbm(uwb_d, config.ref_power_dbm, config.path_loss_exponent)
    uwb_power = uwb_power - config.uwb_nlos_power_penalty_db * uwb_nlos
    if config.uwb_power_sigma_db > 0:
        uwb_power = uwb_power + rngs["uwb"].normal(0.0, config.uwb_power_sigma_db,
                                                   uwb_power.shape)

    # IMU: body-frame kinematics plus bias and white noise
    imu_rng = rngs["imu"]
    heading = trajectory.headings
    accel_world = trajectory.accelerations
    cos_h, sin_h = np.cos(heading), np.sin(heading)
    accel_body_x = cos_h * accel_world[:, 0] + sin_h * accel_world[:, 1]
    accel_body_y = -sin_h * accel_world[:, 0] + cos_h * accel_world[:, 1]
    gyro_z = np.diff(np.unwrap(heading), append=np.unwrap(heading)[-1:]) * config.sample_rate
    field_world = np.array([20.0, 0.0, 43.0])  # microtesla
    mag = np.stack([cos_h * field_world[0] + sin_h * field_world[1],
                    -sin_h * field_world[0] + cos_h * field_world[1],
                    np.full(n, field_world[2])], axis=1)
    imu = np.zeros((n, 9))
    imu[:, 0] = accel_body_x
    imu[:, 1] = accel_body_y
    imu[:, 2] = 9.81
    imu[:, 5] = gyro_z
    imu[:, 6:9] = mag
    bias = imu_rng.normal(0.0, 0.02, 9)
    sig = np.concatenate([np.full(3, config.imu_accel_sigma),
                          np.full(3, config.imu_gyro_sigma),
                          np.full(3, config.imu_mag_sigma)])
    if np.any(sig > 0):
        imu = imu + bias + imu_rng.normal(0.0, 1.0, (n, 9)) * sig

    # dropouts: missing readings become NaN
    drop = rngs["dropout"]
    if config.rssi_dropout > 0:
        lost = drop.random((n, l_w)) < config.rssi_dropout
        rssi[lost] = np.nan
        csi[lost] = np.nan
    if config.uwb_nlos_dropout > 0:
        lost = uwb_nlos & (drop.random((n, l_u)) < config.uwb_nlos_dropout)
        uwb_range[lost] = np.nan
        uwb_power[lost] = np.nan

    # simulated sensor failure: replace a whole stream with seeded noise
    corrupt = rngs["corrupt"]
    if "rssi" in config.pure_noise_sensors:
        rssi = corrupt.normal(-60.0, 5.0, rssi.shape)
    if "csi" in config.pure_noise_sensors:
        re_im = corrupt.normal(0.0, 1.0, (n, l_w, n_c, 2))
        csi = re_im[..., 0] + 1j * re_im[..., 1]
    if "uwb" in config.pure_noise_sensors:
        uwb_range = np.abs(corrupt.normal(5.0, 2.0, uwb_range.shape))
        uwb_power = corrupt.normal(-60.0, 5.0, uwb_power.shape)
    if "imu" in config.pure_noise_sensors:
        imu = corrupt.normal(0.0, 1.0, imu.shape)

    meta = {
        "sim_config": config.to_dict(),
        "wifi_nlos_fraction": float(wifi_nlos.mean()),
        "uwb_nlos_fraction": float(uwb_nlos.mean()),
        # in-memory diagnostics; never serialized
        "_diagnostics": {"uwb_nlos": uwb_nlos, "wifi_nlos": wifi_nlos,
                         "uwb_true_range": uwb_d},
    }
    return Recording(
        timestamps=trajectory.timestamps,
        coords=pos.copy(),
        rssi=rssi,
        csi=csi,
        uwb_range=uwb_range,
        uwb_power=uwb_power,
        imu=imu,
        meta=meta,
    )


def simulate(config: SimConfig, floorplan: Floorplan | None = None) -> Recording:
    """Trajectory plus measurements in one call."""
    if floorplan is not None:
        plan = floorplan
    elif config.open_plan:
        plan = open_floorplan()
    else:
        plan = default_floorplan()
    traj_rng = _child_rngs(config.seed, ("trajectory",))["trajectory"]
    traj = circuit_trajectory(config.n_samples, config.speed, config.sample_rate, traj_rng)
    recording = gen_measurements(traj, plan, config)
    recording.meta["floorplan"] = floorplan_to_dict(plan)
    return recording
