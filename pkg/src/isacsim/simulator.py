"""World construction, the two-time-scale ISAC driving environment, and experiment runners.

The road is a ring of ``road_length`` metres (x is periodic) with fixed lanes.
RSUs sit evenly along one side. Every short slot each RSU beams at up to K
targets, senses them, and relays sensed HDV states to requesting CAVs whose
link meets the rate threshold. CAVs never see HDVs directly: a CAV's picture of
an HDV is whatever was last relayed to it, with an age counter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import io as sio
from .channel import (RsuConfig, SubcarrierPlan, assign_subcarriers, conjugate_beamformer,
                      effective_channel, frobenius_power, vehicle_rate)
from .config import ConfigError, ScenarioConfig
from .marl import AgentBundle, Schedule, run_episode
from .marl.rewards import capped_ttc, reward_cav, reward_rsu
from .sensing import (EchoParams, UnobservableTarget, blended_beam, crb_angle,
                      measurement_variances, sense_target)
from .traffic import (CAV, HDV, ControlInput, IdmParams, LaneGeometry, Limits, VehicleState,
                      cr_flag, enforce_constraints, gap_report, hdv_accel, integrate, ttc)
from .voi import LONG, SHORT, TrajectoryLog, augment_state, estimate_values, select_high_value

log = logging.getLogger(__name__)

SOURCE_FIELDS = 6          # spacing_error, velocity_error, speed, accel, heading, position
CAV_LONG_LOCAL = 10
AGE_SCALE = 50.0
EVAL_BASE = 1_000_000      # episode ids for evaluation worlds


class PowerViolation(RuntimeError):
    pass


# ---------------------------------------------------------------- world


@dataclass
class World:
    vehicles: dict
    rsus: list
    road_length: float
    lanes: LaneGeometry
    time: float = 0.0

    @property
    def cav_ids(self) -> list[int]:
        return sorted(v for v, s in self.vehicles.items() if s.kind == CAV)

    @property
    def hdv_ids(self) -> list[int]:
        return sorted(v for v, s in self.vehicles.items() if s.kind == HDV)

    def ahead(self, x_from: float, x_to: float) -> float:
        """Forward ring distance from x_from to x_to, in [0, L)."""
        return (x_to - x_from) % self.road_length

    def offset(self, x: float, x_ref: float) -> float:
        """Signed ring offset of x relative to x_ref, in [-L/2, L/2)."""
        return (x - x_ref + self.road_length / 2) % self.road_length - self.road_length / 2

    def leader_of(self, vid: int) -> Optional[int]:
        me = self.vehicles[vid]
        best, best_d = None, math.inf
        for oid, o in self.vehicles.items():
            if oid == vid or o.lane != me.lane:
                continue
            d = self.ahead(me.x, o.x)
            if d < best_d or (d == best_d and oid < best):
                best, best_d = oid, d
        return best

    def unwrapped_leader(self, vid: int, leader: int) -> VehicleState:
        """Leader state shifted so it sits ahead of the follower in plain coordinates."""
        me, lead = self.vehicles[vid], self.vehicles[leader]
        return replace(lead, x=me.x + self.ahead(me.x, lead.x))

    def rsu_geometry(self, rsu: RsuConfig, x: float, y: float) -> tuple[float, float]:
        """(3-D distance, azimuth) from an RSU to a point, using the nearest ring image."""
        xx = rsu.x + self.offset(x, rsu.x)
        return rsu.distance(xx, y), rsu.azimuth(xx, y)

    def cluster(self, vid: int, size: int) -> list[int]:
        v = self.vehicles[vid]
        ranked = sorted(self.rsus, key=lambda r: (self.rsu_geometry(r, v.x, v.y)[0], r.id))
        return [r.id for r in ranked[:size]]


def build_world(cfg: ScenarioConfig, rng: np.random.Generator) -> World:
    c, g, p = cfg.counts, cfg.geometry, cfg.physics
    lanes = LaneGeometry(c.lanes, g.lane_width)
    ids = list(range(c.cavs + c.hdvs))
    order = rng.permutation(ids)
    per_lane: dict[int, list[int]] = {}
    for i, vid in enumerate(order):
        per_lane.setdefault(i % c.lanes + 1, []).append(int(vid))
    vehicles = {}
    for lane, members in sorted(per_lane.items()):
        n = len(members)
        slack = g.road_length - n * (g.vehicle_length + g.standstill_gap)
        if slack < 0:
            raise ConfigError(f"{n} vehicles do not fit on lane {lane} of a "
                              f"{g.road_length} m ring at the standstill gap")
        extra = slack * rng.dirichlet(np.ones(n)) if n > 1 else np.array([slack])
        x = rng.uniform(0, g.road_length)
        for k, vid in enumerate(members):
            speed = rng.uniform(g.initial_speed_min, g.initial_speed_max)
            vehicles[vid] = VehicleState(
                id=vid, kind=CAV if vid < c.cavs else HDV, lane=lane, x=x % g.road_length,
                y=lanes.center(lane), speed=speed, length=g.vehicle_length,
                lag=p.actuation_lag, time_gap=p.time_gap)
            x += g.vehicle_length + g.standstill_gap + extra[k]
    spacing = g.road_length / c.rsus
    rsus = [RsuConfig(id=r, x=(r + 0.5) * spacing, y=-g.rsu_offset, height=g.rsu_height,
                      n_antennas=c.antennas, p_max=p.p_max) for r in range(c.rsus)]
    return World(vehicles, rsus, g.road_length, lanes)


# ---------------------------------------------------------------- metrics


@dataclass
class MetricsRecord:
    episode: int
    phase: str
    mean_ttc: float
    min_ttc: float
    cr_ratio: float
    cr_events: int
    spacing_rms: float
    velocity_rms: float
    mean_crb_d: float
    mean_crb_theta: float
    rate_ok_fraction: float
    relay_success: int
    relay_failed: int
    voi_selected_long: float
    voi_selected_short: float
    reward_cav_long: float
    reward_cav_short: float
    reward_rsu: float
    collisions: int
    power_peak_ratio: float

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


TRACE_HEADER = ["phase", "episode", "long_step", "slot", "time", "vehicle", "spacing_error",
                "velocity_error", "accel", "input_u", "ttc", "cr"]
TRANSITION_HEADER = ["phase", "episode", "long_step", "slot", "kind", "agent", "reward"]
VOI_HEADER = ["episode", "vehicle", "source", "timescale", "kl_bits", "sigma_mc", "selected"]
LOG_HEADER = ["episode", "agent", "reward", "critic_loss", "actor_grad_norm", "epsilon"]


# ---------------------------------------------------------------- environment


def seed_rng(seed: int, stream: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, episode]))


class IsacEnv:
    """Two-time-scale environment; ``learned`` selects which roles are driven by agents.

    Roles not driven by agents fall back to the reference policies: a linear
    spacing controller for CAV driving, round-robin relay requests, and
    conjugate beamforming with an equal power split for the RSUs.
    """

    def __init__(self, cfg: ScenarioConfig, learned: bool = True):
        self.cfg = cfg.validate()
        self.learned = learned
        c = cfg.counts
        self.cav_ids = list(range(c.cavs))
        self.hdv_ids = list(range(c.cavs, c.cavs + c.hdvs))
        self.limits = Limits(u_max=cfg.physics.u_max, alpha_max=cfg.physics.alpha_max,
                             speed_max=cfg.physics.speed_max, accel_min=cfg.physics.accel_min,
                             accel_max=cfg.physics.u_max)
        self.idm = IdmParams(desired_speed=cfg.physics.hdv_desired_speed,
                             min_gap=cfg.geometry.standstill_gap)
        p = cfg.physics
        self.echo = EchoParams(rcs=p.rcs, n_tx=c.antennas, n_rx=c.antennas,
                               matched_gain=p.matched_gain, sigma2_k=p.sensing_noise,
                               sigma2_m=p.sensing_noise, rho=p.rho, rho_v=p.rho_v)
        self.long_agents = [f"cav{v}/L" for v in self.cav_ids] if learned else []
        self.short_agents = ([f"cav{v}/S" for v in self.cav_ids] +
                             [f"rsu{r}/S" for r in range(c.rsus)]) if learned else []
        self.long_steps = cfg.timing.long_steps
        self.short_per_long = cfg.timing.short_per_long
        self.voi_log = TrajectoryLog(cfg.marl.voi_log)
        self.selection = {(v, ts): [] for v in self.cav_ids for ts in (LONG, SHORT)}
        self.voi_rows: list = []
        self.trace_rows: list = []
        self.transition_rows: list = []
        self.phase = "train"
        self.power_audits = 0
        self.power_violations = 0
        self.world: Optional[World] = None

    # ---- schema

    def obs_dim(self, name: str) -> int:
        kind, ts = self._split(name)
        slots = self.cfg.marl.voi_slots * (SOURCE_FIELDS + 1)
        if kind == "rsu":
            return 4 * self.cfg.counts.subcarriers
        if ts == LONG:
            return CAV_LONG_LOCAL + slots
        return 3 + 2 * len(self.hdv_ids) + slots

    def act_dim(self, name: str) -> int:
        kind, ts = self._split(name)
        if kind == "rsu":
            return 2 * self.cfg.counts.subcarriers
        return 2 if ts == LONG else max(1, len(self.hdv_ids))

    def action_bounds(self, name: str):
        kind, ts = self._split(name)
        n = self.act_dim(name)
        if kind == "cav" and ts == LONG:
            p = self.cfg.physics
            return np.array([-p.u_max, -p.alpha_max]), np.array([p.u_max, p.alpha_max])
        return -np.ones(n), np.ones(n)

    def global_dim(self, name: str) -> int:
        if not self.cfg.marl.centralized_critic:
            return 0
        kind, ts = self._split(name)
        if kind == "rsu":
            return 4 * self.cfg.counts.subcarriers * self.cfg.counts.rsus
        local = CAV_LONG_LOCAL if ts == LONG else 3 + 2 * len(self.hdv_ids)
        return local * len(self.cav_ids)

    @staticmethod
    def _split(name: str) -> tuple[str, str]:
        who, ts = name.split("/")
        return ("rsu" if who.startswith("rsu") else "cav"), ts

    @staticmethod
    def _index(name: str) -> int:
        who = name.split("/")[0]
        return int(who[3:])

    # ---- episode lifecycle

    def reset(self, episode: int) -> None:
        cfg = self.cfg
        self.episode = episode
        if self.phase == "train" and episode > 0 and episode % cfg.marl.voi_every == 0:
            self._refresh_selection(episode)
        self.world = build_world(cfg, seed_rng(cfg.seed, 0, episode))
        self.sense_rng = seed_rng(cfg.seed, 1, episode)
        self.voi_rng = seed_rng(cfg.seed, 3, episode)
        self.tau = 0
        self.slot = 0
        self.controls = {v: ControlInput() for v in self.cav_ids}
        self.hdv_inputs = {h: 0.0 for h in self.hdv_ids}
        self.requests = {v: np.zeros(len(self.hdv_ids)) for v in self.cav_ids}
        # initial HDV picture: one sensed snapshot per CAV; afterwards only relays refresh it
        self.views = {v: {} for v in self.cav_ids}
        self.ages = {v: {h: 0 for h in self.hdv_ids} for v in self.cav_ids}
        self._initial_views()
        self.v2x = {v: {s: self._source_fields(s, v) for s in self.cav_ids if s != v}
                    for v in self.cav_ids}
        self.served: dict[int, list[int]] = {}
        self.last_crb: dict[tuple[int, int], tuple[float, float]] = {}
        self._update_service()
        self.pending_pred: dict = {}
        self.slot_ttc = {v: [] for v in self.cav_ids}
        self.slot_lane = {v: [] for v in self.cav_ids}
        self.acc = {"ttc": [], "cr": [], "e": [], "ev": [], "crb_d": [], "crb_t": [],
                    "rate_ok": [], "relay_ok": 0, "relay_fail": 0, "collisions": 0,
                    "r_long": [], "r_short": [], "r_rsu": [], "power_peak": 0.0}

    def _initial_views(self):
        w = self.world
        for h in self.hdv_ids:
            hv = w.vehicles[h]
            for v in self.cav_ids:
                rid = w.cluster(v, 1)[0]
                rsu = w.rsus[rid]
                d, th = w.rsu_geometry(rsu, hv.x, hv.y)
                h_ch = effective_channel(d, th, rsu.n_antennas, self.cfg.physics.gain_ref,
                                         self.cfg.physics.carrier)
                f = conjugate_beamformer(h_ch, rsu.p_max)
                self.views[v][h] = self._sensed_state(rsu, hv, f)

    def finish_episode(self) -> dict:
        a = self.acc
        self.voi_log.drop_pending()
        cap = self.cfg.thresholds.ttc_cap
        ttc_arr = capped_ttc(a["ttc"], cap) if a["ttc"] else np.array([cap])
        nsel = lambda ts: float(np.mean([len(self.selection[(v, ts)]) for v in self.cav_ids]))
        mean = lambda x: float(np.mean(x)) if len(x) else float("nan")
        rms = lambda x: float(np.sqrt(np.mean(np.square(x)))) if len(x) else 0.0
        rec = MetricsRecord(
            episode=self.episode, phase=self.phase,
            mean_ttc=float(np.mean(ttc_arr)), min_ttc=float(np.min(ttc_arr)),
            cr_ratio=mean(a["cr"]) if a["cr"] else 0.0, cr_events=int(np.sum(a["cr"])),
            spacing_rms=rms(a["e"]), velocity_rms=rms(a["ev"]),
            mean_crb_d=mean(a["crb_d"]), mean_crb_theta=mean(a["crb_t"]),
            rate_ok_fraction=mean(a["rate_ok"]), relay_success=a["relay_ok"],
            relay_failed=a["relay_fail"], voi_selected_long=nsel(LONG),
            voi_selected_short=nsel(SHORT), reward_cav_long=mean(a["r_long"]),
            reward_cav_short=mean(a["r_short"]), reward_rsu=mean(a["r_rsu"]),
            collisions=a["collisions"], power_peak_ratio=a["power_peak"])
        return {"record": rec}

    # ---- observations

    def _perceived_leader(self, v: int):
        """(leader id, leader state as the CAV knows it, age) or (None, None, 0)."""
        w = self.world
        lead = w.leader_of(v)
        if lead is None:
            return None, None, 0
        if lead in self.hdv_ids:
            x, y, speed = self.views[v][lead]
            st = replace(w.vehicles[lead], x=x, y=y, speed=speed)
            return lead, st, self.ages[v][lead]
        return lead, w.vehicles[lead], 0

    def _errors(self, v: int, leader_state: Optional[VehicleState]) -> tuple[float, float, float]:
        """(spacing error, velocity error, gap) of v against a given leader picture."""
        me = self.world.vehicles[v]
        if leader_state is None:
            return 0.0, 0.0, math.inf
        shifted = replace(leader_state, x=me.x + self.world.ahead(me.x, leader_state.x),
                          lane=me.lane)
        rep = gap_report(me, shifted, self.cfg.geometry.standstill_gap)
        return rep.spacing_error, rep.velocity_error, rep.gap

    def _source_fields(self, src: int, ref: int) -> np.ndarray:
        w = self.world
        s = w.vehicles[src]
        lead = w.leader_of(src)
        e, ev, _ = self._errors(src, w.vehicles[lead]) if lead is not None else (0.0, 0.0, 0.0)
        return np.array([np.clip(e / 10, -10, 10), ev / 5, s.speed / 40, s.accel / 5, s.heading,
                         w.offset(s.x, w.vehicles[ref].x) / 100])

    def _long_local(self, v: int) -> np.ndarray:
        w = self.world
        me = w.vehicles[v]
        lead, lead_state, age = self._perceived_leader(v)
        e, ev, _ = self._errors(v, lead_state)
        p = self.cfg.physics
        ctl = self.controls[v]
        return np.array([np.clip(e / 10, -10, 10), ev / 5, me.speed / 40, me.accel / 5, me.heading,
                         (me.y - w.lanes.center(me.lane)) / w.lanes.width,
                         float(lead in self.hdv_ids), min(age, AGE_SCALE) / AGE_SCALE,
                         ctl.u / p.u_max, ctl.alpha / p.alpha_max])

    def _short_local(self, v: int) -> np.ndarray:
        w = self.world
        me = w.vehicles[v]
        lead, lead_state, _ = self._perceived_leader(v)
        e, ev, _ = self._errors(v, lead_state)
        parts = [np.clip(e / 10, -10, 10), ev / 5, float(lead in self.hdv_ids)]
        for h in self.hdv_ids:
            x, _, _ = self.views[v][h]
            parts += [min(self.ages[v][h], AGE_SCALE) / AGE_SCALE, w.offset(x, me.x) / 100]
        return np.array(parts)

    def _augmented(self, v: int, ts: str, local: np.ndarray) -> np.ndarray:
        sel = {s: self.v2x[v][s] for s in self.selection[(v, ts)]}
        return augment_state(local, sel, SOURCE_FIELDS, self.cfg.marl.voi_slots)

    def _rsu_obs(self, r: int) -> np.ndarray:
        w = self.world
        rsu = w.rsus[r]
        K = self.cfg.counts.subcarriers
        out = np.zeros((K, 4))
        for k, vid in enumerate(self.served.get(r, [])[:K]):
            s = w.vehicles[vid]
            d, th = w.rsu_geometry(rsu, s.x, s.y)
            out[k] = [1.0, math.cos(th), d / 100, float(s.kind == HDV)]
        return out.ravel()

    def observe(self, name: str):
        kind, ts = self._split(name)
        i = self._index(name)
        if kind == "rsu":
            obs = self._rsu_obs(i)
            glob = [self._rsu_obs(r) for r in range(self.cfg.counts.rsus)]
        elif ts == LONG:
            obs = self._augmented(i, LONG, self._long_local(i))
            glob = [self._long_local(v) for v in self.cav_ids]
        else:
            obs = self._augmented(i, SHORT, self._short_local(i))
            glob = [self._short_local(v) for v in self.cav_ids]
        if not self.cfg.marl.centralized_critic:
            return obs, obs
        return obs, np.concatenate([obs, *glob])

    # ---- reference policies

    def _acc_control(self, v: int) -> ControlInput:
        _, lead_state, _ = self._perceived_leader(v)
        me = self.world.vehicles[v]
        if lead_state is None:
            u = 0.5 * (self.cfg.physics.hdv_desired_speed - me.speed)
        else:
            # constant time-headway spacing policy (1.5 s) on the perceived gap
            _, ev, gap = self._errors(v, lead_state)
            u = 0.3 * (gap - self.cfg.geometry.standstill_gap - 1.5 * me.speed) - 0.8 * ev
        dy = me.y - self.world.lanes.center(me.lane)
        return ControlInput(u=u, alpha=-0.05 * dy - 0.5 * me.heading)

    def _round_robin_requests(self, v: int) -> np.ndarray:
        req = -np.ones(max(1, len(self.hdv_ids)))
        if self.hdv_ids:
            req[(self.slot + v) % len(self.hdv_ids)] = 1.0
        return req

    # ---- long step

    def apply_long(self, actions: Mapping[str, np.ndarray]) -> None:
        w = self.world
        prev = dict(self.controls)
        for v in self.cav_ids:
            name = f"cav{v}/L"
            if name in actions:
                u, alpha = (float(x) for x in actions[name])
                self.controls[v] = ControlInput(u, alpha)
            else:
                self.controls[v] = self._acc_control(v)
        # VoI log: predecessor's new long action resolves last slow slot's observation
        for v in self.cav_ids:
            if (v, LONG) in self.pending_pred:
                pred = self.pending_pred.pop((v, LONG))
                self.voi_log.resolve(v, LONG, self._pred_long_action(pred))
        for v in self.cav_ids:
            pred = w.leader_of(v)
            if pred is None:
                continue
            self.voi_log.observe(v, LONG, self._source_fields(v, v),
                                 {s: self._source_fields(s, v) for s in self.cav_ids if s != v})
            self.pending_pred[(v, LONG)] = pred
        self._long_start = {v: prev[v] for v in self.cav_ids}

    def _pred_long_action(self, pred: int) -> np.ndarray:
        p = self.cfg.physics
        if pred in self.controls:
            c = self.controls[pred]
            return np.array([c.u / p.u_max, c.alpha / p.alpha_max])
        return np.array([self.hdv_inputs[pred] / p.u_max, 0.0])

    def finish_long(self) -> dict:
        cap = self.cfg.thresholds.ttc_cap
        out = {}
        for v in self.cav_ids:
            trace = self.slot_ttc[v][-self.short_per_long:]
            lane = self.slot_lane[v][-self.short_per_long:]
            r = reward_cav(trace, cap) / cap - self.cfg.marl.lane_weight * float(np.mean(lane))
            out[f"cav{v}/L"] = r
            self.acc["r_long"].append(r)
            self.transition_rows.append([self.phase, self.episode, self.tau, "", "long",
                                         f"cav{v}", r])
        self.tau += 1
        return out

    # ---- short step

    def _update_service(self) -> None:
        """Served sets, channels and subcarrier plans for the current geometry."""
        w, cfg = self.world, self.cfg
        K, R = cfg.counts.subcarriers, cfg.counts.cluster_size
        self.clusters = {v: w.cluster(v, R) for v in self.cav_ids}
        self.geom = {}
        self.channels = {}
        for rsu in w.rsus:
            for vid, s in w.vehicles.items():
                d, th = w.rsu_geometry(rsu, s.x, s.y)
                self.geom[(rsu.id, vid)] = (d, th)
                self.channels[(rsu.id, vid)] = effective_channel(
                    d, th, rsu.n_antennas, cfg.physics.gain_ref, cfg.physics.carrier)
        nearest_hdv = {h: w.cluster(h, 1)[0] for h in self.hdv_ids}
        self.served = {}
        for rsu in w.rsus:
            # HDVs can only be known through sensing, so each RSU serves the HDVs nearest to
            # it first; then CAVs it is primary for, other CAVs in coverage, remaining HDVs
            def rank(v, r=rsu.id):
                if v in nearest_hdv:
                    return 0 if nearest_hdv[v] == r else 3
                return 1 if self.clusters[v][0] == r else 2
            cands = [v for v in self.cav_ids if rsu.id in self.clusters[v]] + list(self.hdv_ids)
            cands.sort(key=lambda v: (rank(v), self.geom[(rsu.id, v)][0], v))
            self.served[rsu.id] = cands[:K]
        self.plans = {r: assign_subcarriers(s, K) for r, s in self.served.items()}

    def _beams(self, r: int, action: Optional[np.ndarray]) -> dict:
        rsu = self.world.rsus[r]
        targets = self.served[r]
        if not targets:
            return {}
        K = self.cfg.counts.subcarriers
        if action is None:
            share = rsu.p_max / len(targets)
            return {v: conjugate_beamformer(self.channels[(r, v)], share) for v in targets}
        a = np.asarray(action, dtype=float)
        w = 1.0 + 0.5 * a[: len(targets)]
        power = rsu.p_max * w / w.sum()
        beams = {}
        for k, v in enumerate(targets):
            d, th = self.geom[(r, v)]
            h = self.channels[(r, v)]
            phase = h[0] / abs(h[0])
            phi = (math.pi / 8) * (1.0 + a[K + k])
            beams[v] = math.sqrt(power[k]) * blended_beam(th, rsu.n_antennas, phi, phase)
        return beams

    def _audit(self, r: int, beams: dict) -> None:
        p_max = self.world.rsus[r].p_max
        total = frobenius_power(list(beams.values()))
        self.power_audits += 1
        self.acc["power_peak"] = max(self.acc["power_peak"], total / p_max)
        if total > p_max * (1 + 1e-9):
            self.power_violations += 1
            raise PowerViolation(f"RSU {r}: beam power {total:.6g} W exceeds {p_max:.6g} W")

    def _sensed_state(self, rsu: RsuConfig, target: VehicleState, F: np.ndarray):
        """Noisy (x, y, speed) of a target from one RSU's echo."""
        d, th = self.world.rsu_geometry(rsu, target.x, target.y)
        m = sense_target(d, th, target.speed, F, self.echo, self.sense_rng)
        horiz = math.sqrt(max(m.distance ** 2 - rsu.height ** 2, 0.0))
        x = (rsu.x + horiz * math.cos(m.angle)) % self.world.road_length
        y = rsu.y + horiz * math.sin(m.angle)
        return (x, y, m.velocity)

    def _crbs(self, r: int, F: np.ndarray, vid: int) -> tuple[float, float]:
        d, th = self.geom[(r, vid)]
        var_d, _ = measurement_variances(F, th, d, self.echo)
        return crb_angle(F, th, d, self.echo), var_d

    def step_short(self, actions: Mapping[str, np.ndarray]) -> dict:
        w, cfg = self.world, self.cfg
        cap = cfg.thresholds.ttc_cap
        rewards = {}
        # (1) beams
        beams = {}
        rsu_crbs = {}
        sensed = {}
        for rsu in w.rsus:
            r = rsu.id
            bl = self._beams(r, actions.get(f"rsu{r}/S"))
            self._audit(r, bl)
            for v, f in bl.items():
                beams[(r, v)] = f
            if not bl:
                continue
            F = np.column_stack([bl[v] for v in self.served[r]])
            ref = self._beams(r, None)
            F_ref = np.column_stack([ref[v] for v in self.served[r]])
            # (2) sensing of every served target
            th_l, d_l, th_ref, d_ref = [], [], [], []
            for v in self.served[r]:
                c_th, c_d = self._crbs(r, F, v)
                r_th, r_d = self._crbs(r, F_ref, v)
                th_l.append(c_th), d_l.append(c_d), th_ref.append(r_th), d_ref.append(r_d)
                self.acc["crb_t"].append(c_th)
                self.acc["crb_d"].append(c_d)
                try:
                    sensed[(r, v)] = self._sensed_state(rsu, w.vehicles[v], F)
                except UnobservableTarget:
                    pass
            rsu_crbs[r] = (th_l, d_l, th_ref, d_ref)
        for r, (th_l, d_l, th_ref, d_ref) in rsu_crbs.items():
            rr = reward_rsu(th_l, d_l, th_ref, d_ref)
            rewards[f"rsu{r}/S"] = rr
            self.acc["r_rsu"].append(rr)
        for rsu in w.rsus:
            rewards.setdefault(f"rsu{rsu.id}/S", 0.0)
        # (4) link quality
        noise = cfg.physics.noise
        rate_ok = {}
        for v in self.cav_ids:
            if any(p.subcarrier_of(v) is not None for p in self.plans.values()):
                rate_ok[v] = vehicle_rate(v, self.channels, beams, self.plans, noise) >= cfg.thresholds.min_rate
            else:
                rate_ok[v] = False
            self.acc["rate_ok"].append(float(rate_ok[v]))
        # (3) relays of HDV states and V2X exchange of CAV states
        n_req = {}
        for v in self.cav_ids:
            name = f"cav{v}/S"
            req = np.asarray(actions[name]) if name in actions else self._round_robin_requests(v)
            self.requests[v] = req
            asked = [h for i, h in enumerate(self.hdv_ids) if req[i] > 0]
            n_req[v] = len(asked)
            for h in self.hdv_ids:
                self.ages[v][h] += 1
            for h in asked:
                relay = next((r for r in self.clusters[v] if (r, h) in sensed), None)
                if relay is not None and rate_ok[v]:
                    self.views[v][h] = sensed[(relay, h)]
                    self.ages[v][h] = 0
                    self.acc["relay_ok"] += 1
                else:
                    self.acc["relay_fail"] += 1
            if rate_ok[v]:
                for s in self.cav_ids:
                    if s != v:
                        self.v2x[v][s] = self._source_fields(s, v)
        # short-term VoI log: predecessor's request decision resolves the previous slot
        for v in self.cav_ids:
            key = (v, SHORT)
            if key in self.pending_pred:
                pred = self.pending_pred.pop(key)
                bit = float(np.any(self.requests[pred] > 0)) if pred in self.requests else 0.0
                self.voi_log.resolve(v, SHORT, np.array([bit]))
        for v in self.cav_ids:
            pred = w.leader_of(v)
            if pred is not None:
                self.voi_log.observe(v, SHORT, self._source_fields(v, v),
                                     {s: self._source_fields(s, v) for s in self.cav_ids if s != v})
                self.pending_pred[(v, SHORT)] = pred
        # perception error before moving (what the CAV believes vs. truth)
        perc_err = {}
        for v in self.cav_ids:
            lead, lead_state, _ = self._perceived_leader(v)
            if lead is None or lead not in self.hdv_ids:
                perc_err[v] = 0.0
            else:
                _, _, g_seen = self._errors(v, lead_state)
                _, _, g_true = self._errors(v, w.vehicles[lead])
                perc_err[v] = min(abs(g_seen - g_true), 10.0)
        # (5) kinematics, synchronous update from pre-step states
        dt, sub = cfg.timing.short_slot, cfg.timing.substep
        new = {}
        applied_u = {}
        for vid, s in w.vehicles.items():
            lead = w.leader_of(vid)
            if s.kind == CAV:
                _, lead_state, _ = self._perceived_leader(vid)
                rep = None
                if lead_state is not None:
                    shifted = replace(lead_state, x=s.x + w.ahead(s.x, lead_state.x), lane=s.lane)
                    rep = gap_report(s, shifted, cfg.geometry.standstill_gap)
                ctl, _ = enforce_constraints(s, self.controls[vid], self.limits, rep)
            else:
                leader = w.unwrapped_leader(vid, lead) if lead is not None else None
                acc = hdv_accel(s, leader, self.idm, self.limits)
                self.hdv_inputs[vid] = acc
                ctl = ControlInput(acc, 0.0)
            applied_u[vid] = ctl.u
            ns = integrate(s, ctl, dt, sub, self.limits)
            new[vid] = replace(ns, x=ns.x % w.road_length)
        w.vehicles = new
        w.time += dt
        # (6) metrics and rewards
        t_now = round(w.time, 9)
        short_rewards = []
        for v in self.cav_ids:
            s = w.vehicles[v]
            lead = w.leader_of(v)
            lane_dev = ((s.y - w.lanes.center(s.lane)) / w.lanes.width) ** 2
            self.slot_lane[v].append(lane_dev)
            if lead is None:
                ttc_v, flag, e, ev = math.inf, 0, 0.0, 0.0
            else:
                leader = w.unwrapped_leader(v, lead)
                rep = gap_report(s, leader, cfg.geometry.standstill_gap)
                ttc_v = ttc(s, leader, rep.gap, cfg.thresholds.ttc_eps)
                flag = cr_flag(ttc_v, s.speed, s.accel, cfg.physics.react_time,
                               cfg.physics.brake_decel).flag
                e, ev = rep.spacing_error, rep.velocity_error
                self.acc["collisions"] += int(rep.collision)
                self.acc["ttc"].append(ttc_v)
                self.acc["cr"].append(flag)
                self.acc["e"].append(e)
                self.acc["ev"].append(ev)
            self.slot_ttc[v].append(ttc_v)
            r = (float(capped_ttc(ttc_v, cap)) / cap - cfg.marl.request_cost * n_req[v]
                 - cfg.marl.perception_weight * perc_err[v])
            rewards[f"cav{v}/S"] = r
            short_rewards.append(r)
            self.acc["r_short"].append(r)
            self.trace_rows.append([self.phase, self.episode, self.tau, self.slot, t_now, v, e, ev,
                                    s.accel, applied_u[v], ttc_v, flag])
        self.transition_rows.append([self.phase, self.episode, self.tau, self.slot, "short", "all",
                                     float(np.mean(short_rewards))])
        self.slot += 1
        self._update_service()
        return rewards

    # ---- value of information

    def selection_state(self) -> dict:
        """JSON-able copy of the VoI selection (it shapes the agents' observations)."""
        return {f"{v}/{ts}": list(src) for (v, ts), src in sorted(self.selection.items())}

    def restore_selection(self, state: Mapping) -> None:
        for key, src in state.items():
            v, ts = key.split("/")
            if (int(v), ts) not in self.selection:
                raise ValueError(f"selection entry {key!r} does not fit this scenario")
            self.selection[(int(v), ts)] = [int(x) for x in src]

    def _refresh_selection(self, episode: int) -> None:
        m, th = self.cfg.marl, self.cfg.thresholds
        rng = seed_rng(self.cfg.seed, 4, episode)
        for v in self.cav_ids:
            for ts in (LONG, SHORT):
                thr = th.voi_threshold if ts == LONG or th.voi_threshold_short is None \
                    else th.voi_threshold_short
                recs = estimate_values(self.voi_log, v, ts, [s for s in self.cav_ids if s != v],
                                       m.voi_samples, rng, m.voi_min_samples)
                chosen = set(select_high_value(recs, thr))
                ranked = sorted((r for r in recs if r.source in chosen),
                                key=lambda r: (-r.kl, r.source))[: m.voi_slots]
                keep = {r.source for r in ranked}
                self.selection[(v, ts)] = sorted(keep)
                for r in recs:
                    r.selected = r.source in keep
                    self.voi_rows.append([episode, v, r.source, ts, r.kl, r.sigma, r.selected])


# ---------------------------------------------------------------- runners


def make_agents(env: IsacEnv, seed: int) -> dict:
    m = env.cfg.marl
    agents = {}
    names = list(env.long_agents) + list(env.short_agents)
    streams = np.random.SeedSequence([seed, 2]).spawn(len(names))
    for name, ss in zip(names, streams):
        _, ts = env._split(name)
        low, high = env.action_bounds(name)
        obs = env.obs_dim(name)
        agents[name] = AgentBundle.create(
            name, obs, env.act_dim(name), low, high, critic_dim=obs + env.global_dim(name),
            hidden=tuple(m.hidden), gamma=m.gamma_long if ts == LONG else m.gamma_short,
            tau=m.tau, lr_actor=m.lr_actor, lr_critic=m.lr_critic,
            capacity=m.buffer_long if ts == LONG else m.buffer_short,
            rng=np.random.default_rng(ss))
    return agents


def schedule_for(cfg: ScenarioConfig) -> Schedule:
    m = cfg.marl
    return Schedule(episodes=cfg.timing.episodes, batch_size=m.batch_size,
                    learn_start=m.learn_start, learn_every=m.learn_every,
                    update_interval=m.update_interval, long_replay_steps=m.long_replay_steps,
                    noise_start=m.noise_start, noise_end=m.noise_end)


@dataclass
class RunResult:
    train: list
    evaluation: list
    out_dir: Optional[Path]
    agents: dict
    env: IsacEnv


def _write_outputs(out: Path, env: IsacEnv, train_recs, eval_recs, log_rows) -> None:
    sio.write_csv(out / "metrics.csv", MetricsRecord.header(), [r.row() for r in train_recs])
    sio.write_csv(out / "evaluation.csv", MetricsRecord.header(), [r.row() for r in eval_recs])
    sio.write_csv(out / "voi.csv", VOI_HEADER, env.voi_rows)
    sio.write_csv(out / "training_log.csv", LOG_HEADER, log_rows)
    sio.write_csv(out / "trace.csv", TRACE_HEADER, env.trace_rows)
    sio.write_csv(out / "transitions.csv", TRANSITION_HEADER, env.transition_rows)
    (out / "config.json").write_text(env.cfg.to_json() + "\n")


def run_experiment(cfg: ScenarioConfig, out_dir=None, learned: bool = True,
                   agents: Optional[dict] = None) -> RunResult:
    """Train for ``timing.episodes`` episodes, then evaluate noise-free on held-out worlds."""
    cfg.validate()
    env = IsacEnv(cfg, learned=learned)
    agents = make_agents(env, cfg.seed) if agents is None else agents
    sched = schedule_for(cfg)
    explore = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5]))
    out = Path(out_dir) if out_dir is not None else None
    train_recs, log_rows = [], []
    every = cfg.timing.checkpoint_every
    for ep in range(cfg.timing.episodes):
        env.phase = "train"
        res = run_episode(env, agents, ep, sched, explore, learn=learned)
        train_recs.append(res.metrics["record"])
        for name in sorted(res.rewards):
            log_rows.append([ep, name, res.rewards[name], res.critic_loss[name],
                             res.actor_grad[name], res.noise])
        if out is not None and learned and every and (ep + 1) % every == 0:
            sio.save_checkpoint(out / f"checkpoint-{ep + 1}", agents, ep + 1,
                                explore.bit_generator.state,
                                extra={"selection": env.selection_state()})
    eval_recs = evaluate(env, agents, sched, cfg.timing.eval_episodes)
    if out is not None:
        _write_outputs(out, env, train_recs, eval_recs, log_rows)
        if learned:
            sio.save_checkpoint(out / f"checkpoint-{cfg.timing.episodes}", agents,
                                cfg.timing.episodes, explore.bit_generator.state,
                                extra={"config": cfg.to_dict(),
                                       "selection": env.selection_state()})
    if env.power_violations:
        raise PowerViolation(f"{env.power_violations} power violations")
    return RunResult(train_recs, eval_recs, out, agents, env)


def evaluate(env: IsacEnv, agents: dict, sched: Schedule, n: int) -> list:
    """Noise-free, non-learning episodes on the fixed evaluation world set."""
    env.phase = "eval"
    recs = []
    for i in range(n):
        res = run_episode(env, agents, EVAL_BASE + i, sched, None, learn=False, noise=0.0)
        recs.append(res.metrics["record"])
    env.phase = "train"
    return recs


def baseline_beamforming_run(cfg: ScenarioConfig, out_dir=None) -> RunResult:
    """Reference run: conjugate beams, round-robin relays, linear spacing controller."""
    return run_experiment(cfg, out_dir, learned=False, agents={})
