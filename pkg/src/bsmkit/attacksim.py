"""Synthetic trace generation: genuine kinematic traffic plus the eight
misbehavior classes, emitted in the exact trace-file line format.

Vehicles move in free space with piecewise-constant velocity (small seeded
speed/heading perturbations at each beacon epoch). Every attack is a
transform of (or resampling from) the attacker's own would-be genuine
motion, so each class keeps its detectable kinematic signature:

  A1  position frozen            A12 stale-but-correct kinematics
  A5  speed vector frozen        A13 beacon rate multiplied
  A9  hard stop partway through  A14 A13 rate with random fields
  A11 replay of a target vehicle A18 A14 spread over fresh Sybil pseudonyms
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from bsmkit.model import AttackClass, Bsm, ToolkitError, Vec3
from bsmkit.traceio import write_trace_file

# Pseudonym layout: vehicles get PSEUDO_BASE + vehicle index; Sybil
# pseudonyms live far above so they can never collide.
PSEUDO_BASE = 1000
SYBIL_PSEUDO_BASE = 900_000

# Bound on per-epoch perturbations of the base motion.
SPEED_JITTER_FRAC = 0.02
HEADING_JITTER_RAD = 0.05

# Per-message propagation jitter added to the send time.
RX_JITTER_RANGE = (0.001, 0.01)

# Sub-seed salts so independent draws never share a stream.
_SALT_MOTION = 11
_SALT_PHASE = 12
_SALT_RX = 13
_SALT_RANDOM_FIELDS = 14


class ConfigError(ToolkitError):
    """Scenario configuration violates an invariant."""


class UnsupportedClass(ToolkitError):
    """apply_attack called with the benign class."""


@dataclass(frozen=True)
class Rect:
    x_min: float
    y_min: float
    x_max: float
    y_max: float


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    duration: float
    n_vehicles: int
    attack_mix: dict[AttackClass, int]
    beacon_interval: float = 1.0
    area: Rect = Rect(0.0, 0.0, 1000.0, 1000.0)
    speed_range: tuple[float, float] = (5.0, 15.0)
    dos_rate_multiplier: int = 10
    sybil_pseudos: int = 5
    delay: float = 2.0
    stop_time_fraction: float = 0.5
    replay_lag: float = 1.0

    def validate(self) -> None:
        if self.beacon_interval <= 0:
            raise ConfigError(f"beacon_interval {self.beacon_interval} <= 0")
        if self.duration <= 0:
            raise ConfigError(f"duration {self.duration} <= 0")
        total = sum(self.attack_mix.values())
        if total != self.n_vehicles:
            raise ConfigError(f"attack_mix sums to {total}, expected n_vehicles={self.n_vehicles}")
        if any(count < 0 for count in self.attack_mix.values()):
            raise ConfigError("negative count in attack_mix")
        if self.dos_rate_multiplier < 2:
            raise ConfigError(f"dos_rate_multiplier {self.dos_rate_multiplier} < 2")
        if self.sybil_pseudos < 2:
            raise ConfigError(f"sybil_pseudos {self.sybil_pseudos} < 2")
        if not 0.0 < self.stop_time_fraction < 1.0:
            raise ConfigError(f"stop_time_fraction {self.stop_time_fraction} outside (0,1)")
        if self.attack_mix.get(AttackClass.DATA_REPLAY, 0) > 0 and not self.attack_mix.get(
            AttackClass.GENUINE, 0
        ):
            raise ConfigError("replay attackers need at least one genuine vehicle as target")


def _vehicle_rng(cfg: ScenarioConfig, vehicle_seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed & 0xFFFFFFFF, salt, vehicle_seed])


class Motion:
    """Kinematic state of one vehicle, queryable at any time.

    Velocity is constant within beacon epochs [j*dt, (j+1)*dt) and gets a
    small seeded speed/heading perturbation at each epoch boundary. Before
    t=0 the initial velocity extrapolates backward unperturbed, so state(t)
    is defined for the stale-kinematics attack as well.
    """

    def __init__(self, cfg: ScenarioConfig, vehicle_seed: int):
        rng = _vehicle_rng(cfg, vehicle_seed, _SALT_MOTION)
        self.dt = cfg.beacon_interval
        self.p0 = np.array(
            [
                rng.uniform(cfg.area.x_min, cfg.area.x_max),
                rng.uniform(cfg.area.y_min, cfg.area.y_max),
            ]
        )
        self.base_speed = rng.uniform(*cfg.speed_range)
        self.base_theta = rng.uniform(0.0, 2.0 * math.pi)

        n_epochs = int(math.ceil(cfg.duration / self.dt)) + 2
        speeds = self.base_speed * (1.0 + rng.uniform(-SPEED_JITTER_FRAC, SPEED_JITTER_FRAC, n_epochs))
        thetas = self.base_theta + rng.uniform(-HEADING_JITTER_RAD, HEADING_JITTER_RAD, n_epochs)
        self.vel = np.stack([speeds * np.cos(thetas), speeds * np.sin(thetas)], axis=1)
        self.theta = thetas
        # Cumulative position at each epoch boundary.
        self.boundary_pos = np.concatenate(
            [self.p0[None, :], self.p0[None, :] + np.cumsum(self.vel * self.dt, axis=0)]
        )

    def state(self, t: float) -> tuple[Vec3, Vec3, Vec3, Vec3]:
        """(pos, spd, acl, hed) at time t; z components are always 0."""
        if t < 0.0:
            v = self.vel[0]
            pos = self.p0 + v * t
            theta = self.theta[0]
            acl = (0.0, 0.0, 0.0)
        else:
            j = min(int(t / self.dt), len(self.vel) - 1)
            v = self.vel[j]
            pos = self.boundary_pos[j] + v * (t - j * self.dt)
            theta = self.theta[j]
            if j + 1 < len(self.vel):
                dv = (self.vel[j + 1] - v) / self.dt
                acl = (float(dv[0]), float(dv[1]), 0.0)
            else:
                acl = (0.0, 0.0, 0.0)
        return (
            (float(pos[0]), float(pos[1]), 0.0),
            (float(v[0]), float(v[1]), 0.0),
            acl,
            (math.cos(theta), math.sin(theta), 0.0),
        )


def make_motion(vehicle_seed: int, cfg: ScenarioConfig) -> Motion:
    return Motion(cfg, vehicle_seed)


def _beacon_phase(cfg: ScenarioConfig, vehicle_seed: int, interval: float) -> float:
    """Phase offset within the sending interval, proportional to it so DoS
    resampling keeps the expected message count."""
    u = float(_vehicle_rng(cfg, vehicle_seed, _SALT_PHASE).uniform())
    return u * interval


def _send_times(cfg: ScenarioConfig, vehicle_seed: int, interval: float) -> list[float]:
    phase = _beacon_phase(cfg, vehicle_seed, interval)
    times = []
    k = 0
    while phase + k * interval < cfg.duration:
        times.append(phase + k * interval)
        k += 1
    return times


def _emit_stream(
    cfg: ScenarioConfig,
    vehicle_seed: int,
    motion: Motion,
    interval: float,
    sender_id: int,
    sender_pseudo: int,
    rx_salt_stream: int = 0,
) -> list[Bsm]:
    times = _send_times(cfg, vehicle_seed, interval)
    rx_rng = _vehicle_rng(cfg, vehicle_seed, _SALT_RX + rx_salt_stream)
    jitter = rx_rng.uniform(RX_JITTER_RANGE[0], RX_JITTER_RANGE[1], len(times))
    zero: Vec3 = (0.0, 0.0, 0.0)
    out = []
    for k, t in enumerate(times):
        pos, spd, acl, hed = motion.state(t)
        out.append(
            Bsm(
                msg_type=3,
                rcv_time=t + float(jitter[k]),
                send_time=t,
                sender_id=sender_id,
                sender_pseudo=sender_pseudo,
                message_id=k,
                pos=pos,
                pos_noise=zero,
                spd=spd,
                spd_noise=zero,
                acl=acl,
                acl_noise=zero,
                hed=hed,
                hed_noise=zero,
            )
        )
    return out


def gen_genuine(
    vehicle_seed: int,
    cfg: ScenarioConfig,
    sender_id: int | None = None,
    sender_pseudo: int | None = None,
) -> list[Bsm]:
    """Benign beacon stream for one vehicle, fully determined by the seed.

    sender_id defaults to the vehicle seed; the pseudonym defaults to
    PSEUDO_BASE + sender_id.
    """
    if sender_id is None:
        sender_id = vehicle_seed
    if sender_pseudo is None:
        sender_pseudo = PSEUDO_BASE + sender_id
    motion = Motion(cfg, vehicle_seed)
    return _emit_stream(cfg, vehicle_seed, motion, cfg.beacon_interval, sender_id, sender_pseudo)


def _random_fields(
    cfg: ScenarioConfig, rng: np.random.Generator
) -> tuple[Vec3, Vec3, Vec3, Vec3]:
    """Uniform draws over [0, 2 * max genuine value] per dimension."""
    s_max = cfg.speed_range[1]
    acl_ref = 2.0 * s_max * (SPEED_JITTER_FRAC + HEADING_JITTER_RAD) / cfg.beacon_interval
    pos = (
        float(rng.uniform(0.0, 2.0 * cfg.area.x_max)),
        float(rng.uniform(0.0, 2.0 * cfg.area.y_max)),
        0.0,
    )
    spd = (float(rng.uniform(0.0, 2.0 * s_max)), float(rng.uniform(0.0, 2.0 * s_max)), 0.0)
    acl = (float(rng.uniform(0.0, 2.0 * acl_ref)), float(rng.uniform(0.0, 2.0 * acl_ref)), 0.0)
    hed = (float(rng.uniform(0.0, 2.0)), float(rng.uniform(0.0, 2.0)), 0.0)
    return pos, spd, acl, hed


def sybil_pseudonyms(sender_id: int, count: int) -> list[int]:
    return [SYBIL_PSEUDO_BASE + sender_id * 1000 + i for i in range(count)]


def apply_attack(
    genuine: list[Bsm],
    attack: AttackClass,
    cfg: ScenarioConfig,
    motion: Motion | None = None,
    target_stream: list[Bsm] | None = None,
) -> list[Bsm]:
    """Turn a vehicle's genuine stream into an attack stream.

    The rate-based classes (A13/A14/A18) and the stale-kinematics class
    (A12) need the vehicle's Motion; the replay class (A11) needs the
    target's stream. Seeded draws are re-derived from the attacker's
    sender_id, so the result is independent of call order.
    """
    if attack is AttackClass.GENUINE:
        raise UnsupportedClass("A0 streams come from gen_genuine")
    if not genuine:
        raise ValueError("genuine stream is empty")
    attacker_id = genuine[0].sender_id
    attacker_pseudo = genuine[0].sender_pseudo

    if attack is AttackClass.CONST_POS:
        frozen = genuine[0].pos
        return [replace(b, pos=frozen) for b in genuine]

    if attack is AttackClass.CONST_SPEED:
        frozen = genuine[0].spd
        return [replace(b, spd=frozen) for b in genuine]

    if attack is AttackClass.EVENTUAL_STOP:
        t_stop = cfg.stop_time_fraction * cfg.duration
        out = []
        stop_pos: Vec3 | None = None
        for b in genuine:
            if b.send_time >= t_stop:
                if stop_pos is None:
                    stop_pos = b.pos
                b = replace(b, pos=stop_pos, spd=(0.0, 0.0, 0.0))
            out.append(b)
        return out

    if attack is AttackClass.DATA_REPLAY:
        if target_stream is None:
            raise ValueError("A11 needs the target vehicle's stream")
        return [
            replace(
                t,
                send_time=t.send_time + cfg.replay_lag,
                rcv_time=t.rcv_time + cfg.replay_lag,
                sender_id=attacker_id,
                sender_pseudo=attacker_pseudo,
            )
            for t in target_stream
        ]

    if attack is AttackClass.DELAYED_MESSAGES:
        if motion is None:
            raise ValueError("A12 needs the vehicle's Motion")
        out = []
        for b in genuine:
            pos, spd, acl, hed = motion.state(b.send_time - cfg.delay)
            out.append(replace(b, pos=pos, spd=spd, acl=acl, hed=hed))
        return out

    if attack in (AttackClass.DOS, AttackClass.DOS_RANDOM, AttackClass.DOS_RANDOM_SYBIL):
        if motion is None:
            raise ValueError(f"{attack.code} needs the vehicle's Motion")
        interval = cfg.beacon_interval / cfg.dos_rate_multiplier
        stream = _emit_stream(
            cfg, attacker_id, motion, interval, attacker_id, attacker_pseudo, rx_salt_stream=1
        )
        if attack is AttackClass.DOS:
            return stream
        rng = _vehicle_rng(cfg, attacker_id, _SALT_RANDOM_FIELDS)
        out = []
        for b in stream:
            pos, spd, acl, hed = _random_fields(cfg, rng)
            out.append(replace(b, pos=pos, spd=spd, acl=acl, hed=hed))
        if attack is AttackClass.DOS_RANDOM:
            return out
        pseudos = sybil_pseudonyms(attacker_id, cfg.sybil_pseudos)
        return [replace(b, sender_pseudo=pseudos[i % len(pseudos)]) for i, b in enumerate(out)]

    raise UnsupportedClass(f"no generator for {attack.code}")


@dataclass
class VehicleStream:
    """One vehicle's emitted messages plus its assigned class."""

    vehicle_id: int
    attack: AttackClass
    messages: list[Bsm]

    @property
    def pseudonyms(self) -> list[int]:
        seen: list[int] = []
        for b in self.messages:
            if b.sender_pseudo not in seen:
                seen.append(b.sender_pseudo)
        return seen


def generate_streams(cfg: ScenarioConfig) -> tuple[list[VehicleStream], dict[int, AttackClass]]:
    """All vehicle streams for a scenario, plus the pseudonym ground truth.

    Vehicle ids are assigned over the attack mix in canonical class order,
    each vehicle seeded from (scenario seed, vehicle id).
    """
    cfg.validate()
    assignments: list[AttackClass] = []
    for cls in AttackClass:
        assignments.extend([cls] * cfg.attack_mix.get(cls, 0))

    genuine_streams: dict[int, list[Bsm]] = {}
    motions: dict[int, Motion] = {}
    for vid, cls in enumerate(assignments):
        motions[vid] = Motion(cfg, vid)
        genuine_streams[vid] = _emit_stream(
            cfg, vid, motions[vid], cfg.beacon_interval, vid, PSEUDO_BASE + vid
        )

    target_vid = next((vid for vid, cls in enumerate(assignments) if cls is AttackClass.GENUINE), None)

    streams: list[VehicleStream] = []
    ground_truth: dict[int, AttackClass] = {}
    for vid, cls in enumerate(assignments):
        if cls is AttackClass.GENUINE:
            messages = genuine_streams[vid]
        else:
            messages = apply_attack(
                genuine_streams[vid],
                cls,
                cfg,
                motion=motions[vid],
                target_stream=genuine_streams[target_vid] if target_vid is not None else None,
            )
        stream = VehicleStream(vehicle_id=vid, attack=cls, messages=messages)
        streams.append(stream)
        for pseudo in stream.pseudonyms:
            ground_truth[pseudo] = cls
    return streams, ground_truth


@dataclass
class ScenarioManifest:
    run_id: str
    seed: int
    files: dict[str, str]  # attack code -> filename
    counts: dict[str, int]  # attack code -> message count
    ground_truth: dict[int, str]  # pseudonym -> attack code

    def to_json(self) -> str:
        doc = {
            "run_id": self.run_id,
            "seed": self.seed,
            "files": self.files,
            "counts": self.counts,
            "ground_truth": {str(k): v for k, v in sorted(self.ground_truth.items())},
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScenarioManifest":
        doc = json.loads(text)
        return cls(
            run_id=doc["run_id"],
            seed=doc["seed"],
            files=doc["files"],
            counts=doc["counts"],
            ground_truth={int(k): v for k, v in doc["ground_truth"].items()},
        )

    def truth_classes(self) -> dict[int, AttackClass]:
        from bsmkit.model import attack_class_from_code

        return {pseudo: attack_class_from_code(code) for pseudo, code in self.ground_truth.items()}


MANIFEST_FILENAME = "manifest.json"


def gen_scenario(cfg: ScenarioConfig, out_dir: str | Path) -> ScenarioManifest:
    """Generate a full scenario into out_dir: one trace file per class
    present (attack code embedded in the filename) plus manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    streams, ground_truth = generate_streams(cfg)

    run_id = str(cfg.seed)
    by_class: dict[AttackClass, list[Bsm]] = {}
    for stream in streams:
        by_class.setdefault(stream.attack, []).extend(stream.messages)

    files: dict[str, str] = {}
    counts: dict[str, int] = {}
    for cls in AttackClass:
        if cls not in by_class:
            continue
        records = sorted(by_class[cls], key=lambda b: (b.rcv_time, b.sender_pseudo, b.message_id))
        filename = f"trace-{run_id}-{cls.code}.json"
        write_trace_file(out_dir / filename, records)
        files[cls.code] = filename
        counts[cls.code] = len(records)

    manifest = ScenarioManifest(
        run_id=run_id,
        seed=cfg.seed,
        files=files,
        counts=counts,
        ground_truth={pseudo: cls.code for pseudo, cls in ground_truth.items()},
    )
    (out_dir / MANIFEST_FILENAME).write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """JSON-friendly form of a scenario; inverse of scenario_from_dict."""
    return {
        "seed": cfg.seed,
        "duration": cfg.duration,
        "vehicles": cfg.n_vehicles,
        "mix": {cls.code: count for cls, count in cfg.attack_mix.items()},
        "interval": cfg.beacon_interval,
        "area": [cfg.area.x_min, cfg.area.y_min, cfg.area.x_max, cfg.area.y_max],
        "speed_range": list(cfg.speed_range),
        "dos_rate_multiplier": cfg.dos_rate_multiplier,
        "sybil_pseudos": cfg.sybil_pseudos,
        "delay": cfg.delay,
        "stop_fraction": cfg.stop_time_fraction,
        "replay_lag": cfg.replay_lag,
    }


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    from bsmkit.model import attack_class_from_code

    try:
        mix = {attack_class_from_code(code): int(n) for code, n in doc["mix"].items()}
        defaults = ScenarioConfig(seed=0, duration=1.0, n_vehicles=0, attack_mix={})
        area = doc.get("area")
        cfg = ScenarioConfig(
            seed=int(doc["seed"]),
            duration=float(doc["duration"]),
            n_vehicles=int(doc["vehicles"]),
            attack_mix=mix,
            beacon_interval=float(doc.get("interval", defaults.beacon_interval)),
            area=Rect(*map(float, area)) if area else defaults.area,
            speed_range=tuple(map(float, doc.get("speed_range", defaults.speed_range))),
            dos_rate_multiplier=int(doc.get("dos_rate_multiplier", defaults.dos_rate_multiplier)),
            sybil_pseudos=int(doc.get("sybil_pseudos", defaults.sybil_pseudos)),
            delay=float(doc.get("delay", defaults.delay)),
            stop_time_fraction=float(doc.get("stop_fraction", defaults.stop_time_fraction)),
            replay_lag=float(doc.get("replay_lag", defaults.replay_lag)),
        )
    except KeyError as exc:
        raise ConfigError(f"scenario document missing {exc.args[0]!r}") from None
    cfg.validate()
    return cfg
