import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalebench.simulator import (
    NOT_RECOVERED,
    FailureSchedule,
    JobProfile,
    Phase,
    SimConfig,
    SimulatedCluster,
    Simulation,
    measured_recovery_time,
)

CURVE = ((1, 25_000.0), (2, 50_000.0), (4, 100_000.0), (8, 200_000.0))


def make_sim(scaleout=4, detection=10.0, restart=10.0, noise=0.0, seed=0, ckpt=10.0):
    profile = JobProfile(tmax_curve=CURVE, base_latency_ms=500.0, queue_coeff_ms=50.0, noise_pct=noise)
    cfg = SimConfig(
        tick_s=1.0,
        checkpoint_interval_s=ckpt,
        detection_timeout_s=detection,
        restart_time_s=restart,
        seed=seed,
    )
    return Simulation(profile, cfg, scaleout)


def run(sim, rate, ticks, trace=None):
    trace = trace if trace is not None else []
    for _ in range(ticks):
        trace.append(sim.step(rate))
    return trace


class TestJobProfile:
    def test_tmax_at_curve_points(self):
        p = JobProfile(tmax_curve=CURVE)
        assert p.tmax(4) == 100_000.0

    def test_tmax_interpolates(self):
        p = JobProfile(tmax_curve=((2, 20_000.0), (8, 80_000.0)))
        assert p.tmax(5) == pytest.approx(50_000.0)

    def test_rejects_non_increasing_curve(self):
        with pytest.raises(ValueError):
            JobProfile(tmax_curve=((2, 50_000.0), (4, 50_000.0)))


class TestStep:
    def test_running_below_capacity(self):
        sim = make_sim(scaleout=4)
        m = sim.step(50_000.0)
        assert m.backlog == 0.0
        assert m.processed_rate == 50_000.0
        # rho = 0.5 -> congestion term is exactly one queue coefficient
        assert m.latency_ms == pytest.approx(500.0 + 50.0 * 1.0)
        assert m.cpu_util == pytest.approx(0.5)

    def test_down_accumulates_backlog(self):
        sim = make_sim()
        run(sim, 10_000.0, 5)
        assert sim.inject_failure()
        before = sim.state.backlog
        m = sim.step(10_000.0)
        assert m.phase == "down"
        assert m.processed_rate == 0.0
        assert m.backlog - before == pytest.approx(10_000.0)  # one tick, nothing processed

    def test_catching_up_drains_at_full_capacity(self):
        sim = make_sim(scaleout=4)
        sim.state.phase = Phase.CATCHING_UP
        sim.state.backlog = 300_000.0
        m = sim.step(50_000.0)
        assert m.backlog == pytest.approx(250_000.0)
        assert m.phase == "catching_up"
        assert m.cpu_util == 1.0

    def test_overload_grows_backlog_and_latency(self):
        sim = make_sim(scaleout=1)  # capacity 25k
        trace = run(sim, 50_000.0, 30)
        assert trace[-1].backlog > trace[0].backlog
        assert trace[-1].latency_ms > trace[0].latency_ms

    def test_container_seconds_accrue_every_tick(self):
        sim = make_sim(scaleout=4)
        run(sim, 1000.0, 3)
        sim.inject_failure()
        run(sim, 1000.0, 5)
        assert sim.state.cumulative_container_seconds == pytest.approx(4 * 8.0)


class TestInjectFailure:
    def test_replay_covers_checkpoint_gap_and_downtime(self):
        # checkpoint 10 s before the failure, 20 s outage, constant 50k msg/s:
        # the restored backlog is rate x (checkpoint gap + downtime)
        sim = make_sim(scaleout=4, detection=10.0, restart=10.0)
        run(sim, 50_000.0, 119)  # uptime 119: last checkpoint at 110, 9 s of gap
        assert sim.state.offered_since_checkpoint == pytest.approx(9 * 50_000.0)
        assert sim.inject_failure()
        trace = run(sim, 50_000.0, 20)
        assert trace[-1].phase == "catching_up"
        assert trace[-1].backlog == pytest.approx(50_000.0 * (9 + 20))

    def test_zero_rate_recovers_in_one_tick(self):
        sim = make_sim()
        run(sim, 0.0, 10)
        sim.inject_failure()
        trace = run(sim, 0.0, 21)
        assert trace[-1].phase == "running"
        assert trace[-1].backlog == 0.0

    def test_second_injection_is_noop(self):
        sim = make_sim()
        run(sim, 1000.0, 5)
        assert sim.inject_failure()
        before = sim.state.outage_remaining_s
        assert not sim.inject_failure()
        assert sim.state.outage_remaining_s == before

    def test_uptime_resets(self):
        sim = make_sim()
        run(sim, 1000.0, 50)
        sim.inject_failure()
        assert sim.state.uptime == 0.0
        m = sim.step(1000.0)
        assert m.uptime_s == 0.0  # frozen while down


class TestReconfigure:
    def test_empty_workload_reconfiguration(self):
        sim = make_sim(scaleout=4, restart=10.0)
        run(sim, 0.0, 5)
        assert sim.reconfigure(8)
        trace = run(sim, 0.0, 11)
        assert sim.state.scaleout == 8
        assert trace[-1].phase == "running"
        assert trace[-1].backlog == 0.0

    def test_matches_closed_form_catchup(self):
        # constant rate, reconfigure right before the next checkpoint:
        # recovery ~= restart + rate * (I + restart) / (Tmax(new) - rate)
        rate = 50_000.0
        sim = make_sim(scaleout=2, restart=10.0, ckpt=10.0)
        trace = run(sim, rate, 129)  # 120 s baseline + 9 s past the checkpoint
        t_reconf = sim.state.time
        assert sim.reconfigure(4)
        run(sim, rate, 120, trace)
        measured = measured_recovery_time(trace, t_reconf)
        expected = 10.0 + rate * (10.0 + 10.0) / (100_000.0 - rate)
        assert abs(measured - expected) <= 2.0

    def test_rejected_when_not_running(self):
        sim = make_sim(scaleout=4)
        run(sim, 1000.0, 5)
        sim.inject_failure()
        assert not sim.reconfigure(8)
        assert sim.rejected_reconfigs == 1
        assert sim.state.scaleout == 4

    def test_same_scaleout_rejected(self):
        sim = make_sim(scaleout=4)
        with pytest.raises(ValueError):
            sim.reconfigure(4)


class TestMeasuredRecovery:
    def test_zero_workload_recovery_is_downtime_only(self):
        sim = make_sim(detection=10.0, restart=10.0)
        trace = run(sim, 0.0, 130)
        t_fail = sim.state.time
        sim.inject_failure()
        run(sim, 0.0, 60, trace)
        measured = measured_recovery_time(trace, t_fail)
        assert abs(measured - 20.0) <= 1.0

    def test_constant_rate_matches_closed_form(self):
        rate = 50_000.0
        sim = make_sim(scaleout=4, detection=10.0, restart=10.0, ckpt=10.0)
        trace = run(sim, rate, 129)
        t_fail = sim.state.time
        sim.inject_failure()
        run(sim, rate, 120, trace)
        measured = measured_recovery_time(trace, t_fail)
        # D + rate*(I+D)/(Tmax-rate) = 20 + 30
        assert abs(measured - 50.0) <= 2.0

    def test_overload_never_recovers(self):
        sim = make_sim(scaleout=1)  # capacity 25k < offered
        trace = run(sim, 30_000.0, 130)
        t_fail = sim.state.time
        sim.inject_failure()
        run(sim, 30_000.0, 300, trace)
        assert measured_recovery_time(trace, t_fail) == NOT_RECOVERED


class TestInvariants:
    @given(
        rate=st.floats(0, 90_000.0),
        ticks=st.integers(5, 120),
    )
    @settings(max_examples=60, deadline=None)
    def test_conservation_while_running(self, rate, ticks):
        sim = make_sim(scaleout=4)
        trace = run(sim, rate, ticks)
        processed = sum(m.processed_rate for m in trace)  # tick = 1 s
        assert processed + trace[-1].backlog == pytest.approx(rate * ticks, abs=1e-3)

    def test_determinism_bit_identical(self):
        def trace_for(seed):
            sim = make_sim(noise=0.1, seed=seed)
            return run(sim, 42_000.0, 200)

        a, b = trace_for(7), trace_for(7)
        assert a == b
        c = trace_for(8)
        assert a != c

    @pytest.mark.parametrize("rate", [20_000.0, 60_000.0])
    def test_recovery_monotone_in_scaleout(self, rate):
        recoveries = []
        for scaleout in (2, 4, 8):
            sim = make_sim(scaleout=scaleout, detection=10.0, restart=10.0)
            trace = run(sim, rate, 129)
            t_fail = sim.state.time
            sim.inject_failure()
            run(sim, rate, 600, trace)
            recoveries.append(measured_recovery_time(trace, t_fail))
        assert recoveries == sorted(recoveries, reverse=True) or all(
            abs(a - b) <= 1.0 for a, b in zip(recoveries, recoveries[1:])
        )


class TestFailureSchedule:
    def test_periodic(self):
        sched = FailureSchedule.periodic(1200.0, 1200.0, 8)
        assert len(sched.injection_times) == 8
        assert sched.injection_times[0] == 1200.0
        assert sched.injection_times[-1] == 9600.0

    def test_rejects_unordered(self):
        with pytest.raises(ValueError):
            FailureSchedule(injection_times=(5.0, 5.0))


class TestSimulatedCluster:
    def test_measure_reports_steady_latency(self):
        profile = JobProfile(tmax_curve=CURVE, base_latency_ms=500.0, queue_coeff_ms=50.0)
        cluster = SimulatedCluster(profile, SimConfig())
        cluster.start([4])
        latency = cluster.measure(4, 50_000.0, dwell_s=60.0, settle_s=30.0)
        assert latency == pytest.approx(550.0, rel=0.01)

    def test_stop_removes_deployment(self):
        profile = JobProfile(tmax_curve=CURVE)
        cluster = SimulatedCluster(profile, SimConfig())
        cluster.start([2, 4])
        cluster.stop(2)
        with pytest.raises(KeyError):
            cluster.measure(2, 1000.0, 10.0, 5.0)
