"""The discrete-event core: clock, event queue, agent routines, event log.

One run simulates a single day. Travellers plan, request, receive offers and
ride; drivers work shifts, serve matched requests and optionally reposition;
platforms match their two-sided queues instantly or per batch window. Every
observable step appends to an event log from which all KPIs derive.

Event ordering: the queue pops by (time, phase, agent kind, agent id, seq).
Phases at one timestamp run state changes first (arrivals, shift edges),
then platform matching, then traveller reactions to offers, then the horizon
wrap-up, so matching always sees every state change at time t before agents
react to its outcome.
"""

import heapq
from dataclasses import dataclass
from typing import Mapping, Optional

from ridesim import platforms as plat
from ridesim.decisions import (
    DecisionSet,
    DriverDeclineCtx,
    DriverOutCtx,
    DriverReposCtx,
    MatchCtx,
    PlatformChoiceCtx,
    TravModeCtx,
    TravOutCtx,
)
from ridesim.errors import ConfigError, SimulationError
from ridesim.platforms import PlatformState
from ridesim.scenario import ScenarioConfig, ScenarioInputs
from ridesim.seeds import substream
from ridesim.util import fmt_num

TRAVELLER = "TRAVELLER"
DRIVER = "DRIVER"
PLATFORM = "PLATFORM"
_KIND_RANK = {PLATFORM: 0, DRIVER: 1, TRAVELLER: 2}

# phases within one timestamp
_PH_STATE = 0      # arrivals, shift edges, request submissions
_PH_MATCH = 1      # platform matching passes and batch boundaries
_PH_REACT = 2      # travellers resolving their pending offers
_PH_FINAL = 3      # horizon wrap-up

DEFAULT_RESERVATION_WAGE = 2.5     # currency per hour, used when unset


@dataclass(frozen=True)
class EventRecord:
    day: int
    t: float
    agent_kind: str
    agent_id: int
    event: str
    node: int
    meta: str = ""


@dataclass(frozen=True)
class DriverCarry:
    """Cross-day driver memory fed back into f_driver_out."""
    learned_income: Optional[float]
    participated_yesterday: Optional[bool]


@dataclass(frozen=True)
class DayState:
    drivers: Mapping = None
    traveller_outcomes: Mapping = None


@dataclass(frozen=True)
class DriverDaySummary:
    participated: bool
    earnings: float
    scheduled_hours: float
    idle_s: float = 0.0
    empty_drive_s: float = 0.0
    occupied_s: float = 0.0
    mileage_m: float = 0.0


@dataclass(frozen=True)
class DayResult:
    day: int
    log: tuple
    driver_summaries: dict
    traveller_outcomes: dict
    platform_revenue: dict
    fleet_participating: int


class _TravellerSim:
    __slots__ = ("request", "status", "pending_offers", "rejections", "driver_id")

    def __init__(self, request):
        self.request = request
        self.status = "planning"
        self.pending_offers = []
        self.rejections = 0
        self.driver_id = None


class _DriverSim:
    __slots__ = (
        "spec", "status", "position", "earnings", "idle_s", "empty_drive_s",
        "occupied_s", "mileage_m", "activity", "last_t", "pending_offer",
        "wants_off", "serving", "ended",
    )

    def __init__(self, spec):
        self.spec = spec
        self.status = "offline"
        self.position = spec.home_node
        self.earnings = 0.0
        self.idle_s = 0.0
        self.empty_drive_s = 0.0
        self.occupied_s = 0.0
        self.mileage_m = 0.0
        self.activity = None          # None | "idle" | "empty" | "occupied"
        self.last_t = spec.shift_start
        self.pending_offer = None
        self.wants_off = False
        self.serving = None           # request currently aboard or en route
        self.ended = False


def run_day(
    config: ScenarioConfig,
    inputs: ScenarioInputs,
    decisions: DecisionSet,
    day: int = 0,
    day_state: Optional[DayState] = None,
) -> DayResult:
    """Simulate one day; returns the event log and end-of-day summaries.

    Identical (config, inputs, decisions, day, day_state) produce an
    identical log. Hooks draw only from the day's decision sub-stream.
    """
    return _Sim(config, inputs, decisions, day, day_state).run()


def probe_repos_hook(config: ScenarioConfig, net_n: int, decisions: DecisionSet) -> None:
    """Call f_driver_repos once on synthetic input and type-check the result.

    Raises a config error before the run starts when the hook returns
    something that is not None or a valid node id.
    """
    ctx = DriverReposCtx(
        driver_id=0, position=0, open_requests={0: 1}, n_nodes=net_n,
        params=dict(config.behaviour), rng=substream(config.seed, "probe"),
    )
    target = decisions.f_driver_repos(ctx)
    if target is not None and not (
        isinstance(target, int) and not isinstance(target, bool)
        and 0 <= target < net_n
    ):
        raise ConfigError(
            "decisions.f_driver_repos",
            f"probe call returned {target!r}, expected None or a node id in "
            f"[0, {net_n})",
        )


class _Sim:
    def __init__(self, config, inputs, decisions, day, day_state):
        self.config = config
        self.inputs = inputs
        self.decisions = decisions
        self.day = day
        self.day_state = day_state or DayState(drivers={}, traveller_outcomes={})
        self.skim = inputs.skim
        self.horizon = config.horizon_s
        self.params = dict(config.behaviour)
        self.rng = substream(config.seed, "decisions", day)
        self.log = []
        self.heap = []
        self.seq = 0
        self.now = 0.0
        self.platforms = {
            p.platform_id: PlatformState(spec=p)
            for p in config.platforms
        }
        self.platform_order = sorted(self.platforms)
        self.travellers = {
            r.traveller_id: _TravellerSim(r) for r in inputs.requests
        }
        self.requests_by_id = {r.request_id: r for r in inputs.requests}
        self.traveller_of_request = {
            r.request_id: r.traveller_id for r in inputs.requests
        }
        self.drivers = {d.driver_id: _DriverSim(d) for d in inputs.drivers}
        self.excluded = set()          # (request_id, driver_id), cleared per timestamp
        self.excluded_t = 0.0
        self.resolve_pending = None    # timestamp of a scheduled instant pass
        self.reaction_pending = set()  # traveller ids with a scheduled reaction
        self.has_instant = any(
            p.matching == "instant" for p in config.platforms
        )
        self.last_boundary = {}        # platform id -> timestamp last fired

    # ------------------------------------------------------------ plumbing

    def push(self, t, phase, kind, agent_id, fn):
        heapq.heappush(self.heap, (t, phase, _KIND_RANK[kind], agent_id, self.seq, fn))
        self.seq += 1

    def record(self, kind, agent_id, event, node, meta=""):
        self.log.append(EventRecord(
            day=self.day, t=self.now, agent_kind=kind, agent_id=agent_id,
            event=event, node=node, meta=meta,
        ))

    def fail(self, message):
        raise SimulationError(f"t={fmt_num(self.now)}: {message}")

    # ------------------------------------------------------------- set-up

    def run(self) -> DayResult:
        probe_repos_hook(self.config, self.inputs.net.n, self.decisions)
        participating = self._consult_driver_out()
        for d_id in sorted(self.drivers):
            driver = self.drivers[d_id]
            if d_id in participating:
                self.push(driver.spec.shift_start, _PH_STATE, DRIVER, d_id,
                          lambda d=driver: self.on_shift_start(d))
                self.push(driver.spec.shift_end, _PH_STATE, DRIVER, d_id,
                          lambda d=driver: self.on_shift_end(d))
            else:
                self.push(driver.spec.shift_start, _PH_STATE, DRIVER, d_id,
                          lambda d=driver: self.on_driver_opt_out(d))
        for r in self.inputs.requests:
            trav = self.travellers[r.traveller_id]
            self.push(r.t_request, _PH_STATE, TRAVELLER, r.traveller_id,
                      lambda tr=trav: self.on_plan(tr))
        self.push(self.horizon, _PH_FINAL, PLATFORM, 0, self.on_horizon)

        while self.heap:
            t, _, _, _, _, fn = heapq.heappop(self.heap)
            if t < self.now - 1e-9:
                self.fail(f"event time went backwards ({t} < {self.now})")
            self.now = t
            if self.excluded and t != self.excluded_t:
                self.excluded.clear()
            self.excluded_t = t
            fn()
        return self._result(participating)

    def _consult_driver_out(self):
        carry = self.day_state.drivers or {}
        wage = float(self.params.get(
            "reservation_wage_per_hour", DEFAULT_RESERVATION_WAGE
        ))
        out = set()
        for d_id in sorted(self.drivers):
            c = carry.get(d_id)
            ctx = DriverOutCtx(
                driver_id=d_id,
                spec=self.drivers[d_id].spec,
                day=self.day,
                learned_income_per_hour=c.learned_income if c else None,
                participated_yesterday=c.participated_yesterday if c else None,
                reservation_wage_per_hour=wage,
                params=self.params,
                rng=self.rng,
            )
            stays_out = self.decisions.f_driver_out(ctx)
            if not isinstance(stays_out, bool):
                self.fail(f"f_driver_out returned {stays_out!r} for driver {d_id}")
            if stays_out:
                out.add(d_id)
        return {d_id for d_id in self.drivers if d_id not in out}

    def _result(self, participating):
        summaries = {}
        for d_id in sorted(self.drivers):
            driver = self.drivers[d_id]
            hours = (driver.spec.shift_end - driver.spec.shift_start) / 3600.0
            summaries[d_id] = DriverDaySummary(
                participated=d_id in participating,
                earnings=driver.earnings,
                scheduled_hours=hours,
                idle_s=driver.idle_s,
                empty_drive_s=driver.empty_drive_s,
                occupied_s=driver.occupied_s,
                mileage_m=driver.mileage_m,
            )
        outcomes = {}
        for t_id in sorted(self.travellers):
            trav = self.travellers[t_id]
            outcomes[t_id] = {
                "arrived": "ARRIVED",
                "opted_out": "OPTED_OUT",
                "unserved": "UNSERVED",
                "rejected_waiting": "REJECTED_OFFER",
            }.get(trav.status)
            if outcomes[t_id] is None:
                self.fail(f"traveller {t_id} finished in state {trav.status}")
        revenue = {
            pid: self.platforms[pid].revenue_total for pid in self.platform_order
        }
        return DayResult(
            day=self.day,
            log=tuple(self.log),
            driver_summaries=summaries,
            traveller_outcomes=outcomes,
            platform_revenue=revenue,
            fleet_participating=len(participating),
        )

    # ------------------------------------------------------ time accounting

    def accrue(self, driver, activity=None):
        """Charge time since the driver's last event to its current activity,
        then switch to the new one."""
        dt = self.now - driver.last_t
        if dt < 0:
            self.fail(f"driver {driver.spec.driver_id} time ran backwards")
        if driver.activity == "idle":
            driver.idle_s += dt
        elif driver.activity == "empty":
            driver.empty_drive_s += dt
        elif driver.activity == "occupied":
            driver.occupied_s += dt
        driver.last_t = self.now
        if activity is not None:
            driver.activity = activity

    # -------------------------------------------------------- driver events

    def on_driver_opt_out(self, driver):
        self.record(DRIVER, driver.spec.driver_id, "OPTS_OUT", driver.position)
        driver.status = "opted_out"

    def on_shift_start(self, driver):
        driver.status = "idle"
        driver.activity = "idle"
        driver.last_t = self.now
        self.record(DRIVER, driver.spec.driver_id, "STARTS_SHIFT", driver.position)
        self._add_idle(driver)
        self.schedule_matching()

    def on_shift_end(self, driver):
        driver.wants_off = True
        if driver.status == "idle" and driver.pending_offer is None:
            self._remove_idle(driver)
            self._finish_shift(driver)
        # busy drivers wrap up when their current task releases them

    def _finish_shift(self, driver):
        self.accrue(driver, activity=None)
        driver.status = "off_shift"
        driver.ended = True
        self.record(DRIVER, driver.spec.driver_id, "ENDS_SHIFT", driver.position)

    def _add_idle(self, driver):
        for pid in driver.spec.platform_ids:
            self.platforms[pid].idle.add(driver.spec.driver_id)

    def _remove_idle(self, driver):
        for pid in driver.spec.platform_ids:
            self.platforms[pid].idle.discard(driver.spec.driver_id)

    def _release_driver(self, driver):
        """Return a reserved driver to circulation after a lost or rejected
        offer, or send it home if the shift ended meanwhile."""
        driver.pending_offer = None
        if driver.wants_off:
            self._finish_shift(driver)
            return
        self._add_idle(driver)
        self.schedule_matching()

    def move(self, driver, to_node, on_arrival):
        """Start a leg; mileage accrues at departure, the arrival callback
        fires after the skim travel time."""
        d_id = driver.spec.driver_id
        dist = float(self.skim.distance[driver.position, to_node])
        tt = float(self.skim.travel_time[driver.position, to_node])
        driver.mileage_m += dist
        self.push(self.now + tt, _PH_STATE, DRIVER, d_id,
                  lambda: on_arrival(dist))

    def _timed(self, base_key):
        """Service duration with optional uniform variability."""
        base = float(self.params.get(base_key, 0.0))
        spread = float(self.params.get("service_variability", 0.0))
        if base <= 0.0:
            return 0.0
        if spread <= 0.0:
            return base
        return base * (1.0 + float(self.rng.uniform(-spread, spread)))

    # ----------------------------------------------------- traveller events

    def on_plan(self, trav):
        t_id = trav.request.traveller_id
        self.record(TRAVELLER, t_id, "PLANS", trav.request.origin)
        ctx = TravOutCtx(
            traveller_id=t_id, request=trav.request, day=self.day,
            yesterday_outcome=(self.day_state.traveller_outcomes or {}).get(t_id),
            params=self.params, rng=self.rng,
        )
        opts_out = self.decisions.f_trav_out(ctx)
        if not isinstance(opts_out, bool):
            self.fail(f"f_trav_out returned {opts_out!r} for traveller {t_id}")
        if opts_out:
            trav.status = "opted_out"
            self.record(TRAVELLER, t_id, "OPTS_OUT", trav.request.origin)
            return
        trav.status = "waiting"
        self.record(TRAVELLER, t_id, "REQUESTS", trav.request.origin)
        for pid in self.platform_order:
            self.platforms[pid].enqueue(trav.request.t_request, trav.request.request_id)
        self.schedule_matching()

    # ------------------------------------------------------------- matching

    def schedule_matching(self):
        """Ensure an instant matching pass and any needed batch boundaries
        are on the queue for the current state of the two-sided queues."""
        if self.now <= self.horizon and self.resolve_pending != self.now:
            if self.has_instant:
                self.resolve_pending = self.now
                self.push(self.now, _PH_MATCH, PLATFORM, 0, self.on_instant_pass)
        for pid in self.platform_order:
            state = self.platforms[pid]
            if state.spec.matching != "batched" or not state.waiting:
                continue
            if state.next_batch_at is not None:
                continue
            boundary = plat.next_batch_boundary(state.spec.batch_window_s, self.now)
            if boundary == self.last_boundary.get(pid):
                # this window already ran; late arrivals wait for the next
                boundary += state.spec.batch_window_s
            if boundary > self.horizon:
                continue
            state.next_batch_at = boundary
            self.push(boundary, _PH_MATCH, PLATFORM, pid,
                      lambda s=state: self.on_batch_boundary(s))

    def on_instant_pass(self):
        self.resolve_pending = None
        if self.now > self.horizon:
            return
        offered = []
        for pid in self.platform_order:
            state = self.platforms[pid]
            proposals = plat.trigger(state, lambda s=state: self._run_match(s))
            offered.extend(self._enact(state, proposals))
        self._conclude_pass(offered)

    def on_batch_boundary(self, state):
        state.next_batch_at = None
        self.last_boundary[state.spec.platform_id] = self.now
        if self.now > self.horizon:
            return
        proposals = self._run_match(state)
        offered = self._enact(state, proposals, batch=True)
        self._conclude_pass(offered)
        if state.waiting:
            self.schedule_matching()

    def _run_match(self, state):
        mode = state.spec.matching
        requests = tuple(
            self.requests_by_id[rid] for _, rid in state.waiting
        )
        positions = {
            d: self.drivers[d].position for d in sorted(state.idle)
        }
        ctx = MatchCtx(
            platform_id=state.spec.platform_id,
            mode=mode,
            requests=requests,
            idle=frozenset(state.idle),
            positions=positions,
            excluded=frozenset(self.excluded),
            skim=self.skim,
            params=self.params,
            rng=self.rng,
        )
        pairs = self.decisions.f_match(ctx)
        seen_r, seen_d = set(), set()
        for pair in pairs:
            if not (isinstance(pair, tuple) and len(pair) == 2):
                self.fail(f"f_match returned malformed pair {pair!r}")
            rid, did = pair
            if rid in seen_r or did in seen_d:
                self.fail(f"f_match paired request {rid} or driver {did} twice")
            seen_r.add(rid)
            seen_d.add(did)
            if not state.has_request(rid):
                self.fail(f"f_match matched request {rid} not waiting on "
                          f"platform {state.spec.platform_id}")
            if did not in state.idle:
                self.fail(f"f_match matched driver {did} not idle on "
                          f"platform {state.spec.platform_id}")
        return list(pairs)

    def _enact(self, state, proposals, batch=False):
        """Offer construction for one platform's proposed pairs. Returns the
        request ids that now hold a pending offer."""
        offered = []
        pid = state.spec.platform_id
        for rid, did in proposals:
            request = self.requests_by_id[rid]
            driver = self.drivers[did]
            trav = self.travellers[self.traveller_of_request[rid]]
            offer = plat.make_offer(state.spec, request, did, driver.position,
                                    self.skim)
            self.record(DRIVER, did, "RECEIVES_REQUEST", driver.position,
                        f"request_id={rid};platform_id={pid};"
                        f"eta_s={fmt_num(offer.pickup_eta)}")
            ctx = DriverDeclineCtx(
                driver_id=did, spec=driver.spec, position=driver.position,
                request=request, platform_id=pid,
                pickup_eta=offer.pickup_eta, fare=offer.fare,
                payout=offer.fare * (1.0 - state.spec.commission_rate),
                params=self.params, rng=self.rng,
            )
            declines = self.decisions.f_driver_decline(ctx)
            if not isinstance(declines, bool):
                self.fail(f"f_driver_decline returned {declines!r}")
            if declines:
                self.record(DRIVER, did, "DECLINES_REQUEST", driver.position,
                            f"request_id={rid};platform_id={pid}")
                self.excluded.add((rid, did))
                self._count_rejection(trav, reason_driver=True)
                if not batch:
                    self.schedule_matching()
                continue
            self.record(DRIVER, did, "ACCEPTS_REQUEST", driver.position,
                        f"request_id={rid};platform_id={pid};"
                        f"eta_s={fmt_num(offer.pickup_eta)}")
            self._remove_idle(driver)
            driver.pending_offer = offer
            trav.pending_offers.append(offer)
            offered.append(rid)
        return offered

    def _conclude_pass(self, offered):
        """Move requests holding fresh offers out of every queue and line up
        their travellers' reactions."""
        for rid in offered:
            for pid in self.platform_order:
                self.platforms[pid].remove_request(rid)
            t_id = self.traveller_of_request[rid]
            trav = self.travellers[t_id]
            if trav.status != "unserved":
                # a request can die of rejections in the same pass; its
                # reaction then only hands reserved drivers back
                trav.status = "offered"
            if t_id not in self.reaction_pending:
                self.reaction_pending.add(t_id)
                self.push(self.now, _PH_REACT, TRAVELLER, t_id,
                          lambda tr=trav: self.on_offers(tr))

    def _count_rejection(self, trav, reason_driver):
        trav.rejections += 1
        if trav.rejections >= self.params["max_rejections"]:
            self._fail_request(trav, reason="max_rejections")

    def _fail_request(self, trav, reason):
        rid = trav.request.request_id
        for pid in self.platform_order:
            self.platforms[pid].remove_request(rid)
        trav.status = "unserved"
        self.record(TRAVELLER, trav.request.traveller_id, "UNSERVED",
                    trav.request.origin, f"reason={reason}")

    # ------------------------------------------------------ offer resolution

    def on_offers(self, trav):
        t_id = trav.request.traveller_id
        self.reaction_pending.discard(t_id)
        offers = tuple(trav.pending_offers)
        trav.pending_offers = []
        if not offers:
            self.fail(f"traveller {t_id} woke with no offers")
        if trav.status == "unserved":
            # the request died of rejections in the same pass; just release
            for offer in offers:
                self._release_driver(self.drivers[offer.driver_id])
            return
        for offer in offers:
            self.record(
                TRAVELLER, t_id, "RECEIVES_OFFER", trav.request.origin,
                f"platform_id={offer.platform_id};driver_id={offer.driver_id};"
                f"fare={fmt_num(offer.fare)};eta_s={fmt_num(offer.pickup_eta)}",
            )
        ctx = PlatformChoiceCtx(
            traveller_id=t_id, offers=offers, params=self.params, rng=self.rng,
        )
        choice = self.decisions.f_platform_choice(ctx)
        if not isinstance(choice, int) or isinstance(choice, bool) \
                or not (0 <= choice < len(offers)):
            self.fail(f"f_platform_choice returned {choice!r} "
                      f"for {len(offers)} offers")
        chosen = offers[choice]
        for i, offer in enumerate(offers):
            if i != choice:
                self._release_driver(self.drivers[offer.driver_id])
        mode_ctx = TravModeCtx(
            traveller_id=t_id, offer=chosen, params=self.params, rng=self.rng,
        )
        accepts = self.decisions.f_trav_mode(mode_ctx)
        if not isinstance(accepts, bool):
            self.fail(f"f_trav_mode returned {accepts!r}")
        if not accepts:
            self.record(
                TRAVELLER, t_id, "REJECTS_OFFER", trav.request.origin,
                f"platform_id={chosen.platform_id};driver_id={chosen.driver_id};"
                f"fare={fmt_num(chosen.fare)};eta_s={fmt_num(chosen.pickup_eta)}",
            )
            self.excluded.add((chosen.request_id, chosen.driver_id))
            self._release_driver(self.drivers[chosen.driver_id])
            trav.status = "rejected_waiting"
            self._count_rejection(trav, reason_driver=False)
            if trav.status != "unserved":
                for pid in self.platform_order:
                    self.platforms[pid].enqueue(
                        trav.request.t_request, chosen.request_id
                    )
                self.schedule_matching()
            return
        self.record(
            TRAVELLER, t_id, "ACCEPTS_OFFER", trav.request.origin,
            f"platform_id={chosen.platform_id};driver_id={chosen.driver_id};"
            f"fare={fmt_num(chosen.fare)};eta_s={fmt_num(chosen.pickup_eta)}",
        )
        state = self.platforms[chosen.platform_id]
        match_event = "BATCH_MATCH" if state.spec.matching == "batched" else "MATCH"
        self.record(
            PLATFORM, chosen.platform_id, match_event, -1,
            f"request_id={chosen.request_id};driver_id={chosen.driver_id};"
            f"eta_s={fmt_num(chosen.pickup_eta)};fare={fmt_num(chosen.fare)}",
        )
        trav.status = "matched"
        trav.driver_id = chosen.driver_id
        driver = self.drivers[chosen.driver_id]
        driver.pending_offer = None
        driver.serving = chosen
        driver.status = "en_route_pickup"
        self.accrue(driver, activity="empty")
        self.move(driver, trav.request.origin,
                  lambda dist, d=driver: self.on_pickup_arrival(d, dist))

    # ------------------------------------------------------------ the ride

    def on_pickup_arrival(self, driver, dist):
        offer = driver.serving
        request = self.requests_by_id[offer.request_id]
        d_id = driver.spec.driver_id
        driver.position = request.origin
        self.accrue(driver, activity="idle")      # boarding wait is not driving
        self.record(DRIVER, d_id, "ARRIVES_PICKUP", request.origin,
                    f"request_id={request.request_id};"
                    f"platform_id={offer.platform_id};dist_m={fmt_num(dist)}")
        boarding = self._timed("t_board_s")
        self.push(self.now + boarding, _PH_STATE, DRIVER, d_id,
                  lambda: self.on_departure(driver))

    def on_departure(self, driver):
        offer = driver.serving
        request = self.requests_by_id[offer.request_id]
        trav = self.travellers[request.traveller_id]
        d_id = driver.spec.driver_id
        driver.status = "with_traveller"
        self.accrue(driver, activity="occupied")
        self.record(DRIVER, d_id, "DEPARTS_WITH_TRAVELLER", request.origin,
                    f"request_id={request.request_id};"
                    f"platform_id={offer.platform_id}")
        trav.status = "in_vehicle"
        self.record(TRAVELLER, request.traveller_id, "PICKED_UP", request.origin,
                    f"driver_id={d_id};platform_id={offer.platform_id}")
        self.move(driver, request.destination,
                  lambda dist, d=driver: self.on_service_arrival(d, dist))

    def on_service_arrival(self, driver, dist):
        request = self.requests_by_id[driver.serving.request_id]
        driver.position = request.destination
        alight = self._timed("t_alight_s")
        self.push(self.now + alight, _PH_STATE, DRIVER, driver.spec.driver_id,
                  lambda: self.on_ride_complete(driver, dist))

    def on_ride_complete(self, driver, dist):
        offer = driver.serving
        request = self.requests_by_id[offer.request_id]
        trav = self.travellers[request.traveller_id]
        d_id = driver.spec.driver_id
        state = self.platforms[offer.platform_id]
        payout, cut = plat.settle(state, offer.fare)
        driver.earnings += payout
        self.accrue(driver, activity="idle")
        self.record(
            DRIVER, d_id, "COMPLETES_RIDE", request.destination,
            f"request_id={request.request_id};platform_id={offer.platform_id};"
            f"dist_m={fmt_num(dist)};fare={fmt_num(offer.fare)};"
            f"payout={fmt_num(payout)};cut={fmt_num(cut)}",
        )
        trav.status = "arrived"
        self.record(TRAVELLER, request.traveller_id, "ARRIVES",
                    request.destination)
        driver.serving = None
        driver.status = "idle"
        if driver.wants_off:
            self._finish_shift(driver)
            return
        target = self._consult_repos(driver)
        if target is None:
            self._add_idle(driver)
            self.schedule_matching()
            return
        driver.status = "repositioning"
        self.accrue(driver, activity="empty")
        self.record(DRIVER, d_id, "STARTS_REPOSITIONING", driver.position,
                    f"target={target}")
        self.move(driver, target,
                  lambda dist2, d=driver, to=target: self.on_repos_arrival(d, to, dist2))

    def _consult_repos(self, driver):
        counts = {}
        seen = set()
        for pid in driver.spec.platform_ids:
            for _, rid in self.platforms[pid].waiting:
                if rid not in seen:
                    seen.add(rid)
                    origin = self.requests_by_id[rid].origin
                    counts[origin] = counts.get(origin, 0) + 1
        ctx = DriverReposCtx(
            driver_id=driver.spec.driver_id, position=driver.position,
            open_requests=counts, n_nodes=self.inputs.net.n,
            params=self.params, rng=self.rng,
        )
        target = self.decisions.f_driver_repos(ctx)
        if target is None:
            return None
        if not isinstance(target, int) or isinstance(target, bool) \
                or not (0 <= target < self.inputs.net.n):
            self.fail(f"f_driver_repos returned {target!r}")
        if target == driver.position:
            return None
        return target

    def on_repos_arrival(self, driver, node, dist):
        driver.position = node
        self.accrue(driver, activity="idle")
        self.record(DRIVER, driver.spec.driver_id, "ARRIVES_REPOSITION", node,
                    f"dist_m={fmt_num(dist)}")
        if driver.wants_off:
            self._finish_shift(driver)
            return
        driver.status = "idle"
        self._add_idle(driver)
        self.schedule_matching()

    # ------------------------------------------------------------- horizon

    def on_horizon(self):
        for t_id in sorted(self.travellers):
            trav = self.travellers[t_id]
            if trav.status == "waiting":
                self._fail_request(trav, reason="horizon")
            elif trav.status == "rejected_waiting":
                for pid in self.platform_order:
                    self.platforms[pid].remove_request(trav.request.request_id)
            elif trav.status == "offered":
                self.fail(f"traveller {t_id} still holds offers at the horizon")
