import numpy as np
import pytest

from flexfed_sim.availability import (
    AvailabilityProfile,
    AvailabilityTrace,
    generate_trace,
    read_trace,
    write_trace,
)
from flexfed_sim.client import Client, OfflinePolicy, SchedulingError
from flexfed_sim.har_stream import LabeledWindow
from flexfed_sim.learner import ModelParams, ModelShape, TrainConfig, evaluate, init_params
from flexfed_sim.memory import MemoryBuffer

SIT, STAND, WALK, JOG, UP, DOWN = range(6)
SHAPE = ModelShape(4, 6, 6)


def windows(labels, start=0, seed=0, client_id=0):
    rng = np.random.default_rng(seed)
    out = []
    for i, lab in enumerate(labels):
        f = rng.normal(scale=0.3, size=4)
        f[lab % 4] += 1.5 * (1 + lab // 4)
        out.append(LabeledWindow(client_id, start + i, f, lab))
    return out


def make_client(stream=(), capacity=50, trace=None, theta=None, **kw):
    test = windows([c for c in range(6) for _ in range(5)], seed=99)
    return Client(
        id=0,
        buffer=MemoryBuffer(capacity),
        test_set=test,
        trace=trace if trace is not None else AvailabilityTrace.always_on(10),
        stream=list(stream),
        theta_stored=theta if theta is not None else init_params(SHAPE, 0),
        **kw,
    )


def offline_trace(rounds=10):
    off = np.zeros(rounds, dtype=bool)
    on = np.ones(rounds, dtype=bool)
    return AvailabilityTrace(off, on, on.copy())


class TestAvailability:
    def test_always_available(self):
        prof = AvailabilityProfile(1.0, 1.0, 1.0, 0.0, seed=3)
        assert generate_trace(prof, 50, 300).online.all()

    def test_never_connected(self):
        prof = AvailabilityProfile(0.0, 0.8, 0.8, 0.5, seed=3)
        tr = generate_trace(prof, 200, 300)
        assert not tr.online.any()
        np.testing.assert_array_equal(tr.offline_eligible, tr.idle & tr.powered)

    def test_monte_carlo_rate(self):
        prof = AvailabilityProfile(0.5, 0.9, 0.8, 0.0, seed=12)
        tr = generate_trace(prof, 10_000, 300)
        assert abs(tr.online.mean() - 0.5 * 0.9 * 0.8) <= 0.02

    def test_diurnal_stays_in_range(self):
        prof = AvailabilityProfile(0.9, diurnal_amplitude=1.0)
        ps = [prof.connected_probability(m) for m in range(0, 1440, 7)]
        assert min(ps) >= 0.0 and max(ps) <= 1.0
        assert prof.connected_probability(prof.peak_minute) == 1.0
        assert prof.connected_probability(prof.peak_minute + 720) == 0.0

    def test_deterministic_and_seed_dependent(self):
        a = generate_trace(AvailabilityProfile(seed=1), 300, 60)
        b = generate_trace(AvailabilityProfile(seed=1), 300, 60)
        c = generate_trace(AvailabilityProfile(seed=2), 300, 60)
        assert np.array_equal(a.online, b.online)
        assert not np.array_equal(a.online, c.online)

    def test_trace_roundtrip(self, tmp_path):
        tr = generate_trace(AvailabilityProfile(0.4, 0.7, 0.6, 0.3, seed=5), 40, 300)
        p = tmp_path / "client_0.csv"
        write_trace(tr, p)
        back = read_trace(p, 40)
        for name in ("connected", "idle", "powered", "online"):
            assert np.array_equal(getattr(tr, name), getattr(back, name))

    def test_trace_missing_round(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("round,connected,idle,powered\n1,1,1,1\n3,1,1,1\n")
        with pytest.raises(ValueError, match="missing rounds"):
            read_trace(p)

    def test_trace_bad_flag(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("round,connected,idle,powered\n1,2,1,1\n")
        with pytest.raises(ValueError, match=":2:"):
            read_trace(p)

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            AvailabilityProfile(p_connected=1.2)


class TestStreaming:
    def test_nothing_new(self):
        c = make_client(windows([SIT] * 5, start=100), window_len=1)
        assert c.advance_stream(50) == 0
        assert len(c.buffer) == 0

    def test_fifo_keeps_newest(self):
        stream = windows([SIT] * 8)
        c = make_client(stream, capacity=5, window_len=1)
        c.advance_stream(1000)
        assert list(c.buffer.fifo) == stream[3:]

    def test_window_must_complete(self):
        c = make_client(windows([SIT] * 4, start=10), window_len=4)
        assert c.advance_stream(14) == 1  # window at t=10 occupies minutes 10..13
        assert c.advance_stream(15) == 1

    def test_rare_evictee_is_retained(self):
        # one Upstairs among eight arrivals; m=5 with budget 2
        stream = windows([UP] + [SIT] * 7)
        c = make_client(stream, capacity=5, adaptive_memory=True, window_len=1)
        c.buffer.set_alpha(0.6)
        c.advance_stream(1000)
        assert c.buffer.retained == {UP: [stream[0]]}
        assert list(c.buffer.fifo) == stream[4:]

    def test_no_retention_without_adaptive_memory(self):
        c = make_client(windows([UP] + [SIT] * 7), capacity=5, window_len=1)
        c.buffer.set_alpha(0.6)
        c.advance_stream(1000)
        assert c.buffer.retained_size == 0


class TestParticipate:
    def trained_client(self, **kw):
        stream = windows([c for c in range(6) for _ in range(8)], seed=1)
        c = make_client(stream, capacity=100, window_len=1, gate_uploads=True, **kw)
        c.advance_stream(10_000)
        return c

    def test_improved_model_uploaded(self):
        c = self.trained_client()
        up = c.participate(c.theta_stored, TrainConfig(epochs=20, lr=0.3), 1)
        assert up.fresh_model and up.staleness == 0
        assert c.theta_stored.theta.tobytes() == up.params.theta.tobytes()
        assert c.stored_round == 1

    def test_degraded_model_replaced_by_stored(self):
        c = self.trained_client()
        c.participate(c.theta_stored, TrainConfig(epochs=30, lr=0.3), 1)
        stored = c.theta_stored.copy()
        bad = ModelParams(np.zeros(SHAPE.size), SHAPE)  # predicts class 0 everywhere, accuracy 1/6
        up = c.participate(bad, TrainConfig(epochs=1, lr=0.0), 4)
        assert not up.fresh_model
        assert up.staleness == 3
        assert up.params.theta.tobytes() == stored.theta.tobytes()
        assert c.theta_stored.theta.tobytes() == stored.theta.tobytes()

    def test_tie_uploads_new_model(self):
        c = self.trained_client()
        g = init_params(SHAPE, 5)
        c.theta_stored = g.copy()
        c.stored_score = c.score(g)
        up = c.participate(g, TrainConfig(epochs=1, lr=0.0), 2)  # identical params, equal accuracy
        assert up.fresh_model and c.stored_round == 2

    def test_no_data(self):
        from flexfed_sim.learner import NoTrainableData

        c = make_client()
        with pytest.raises(NoTrainableData):
            c.participate(c.theta_stored, TrainConfig(), 1)

    def test_without_gating_uploads_trained(self):
        stream = windows([SIT, WALK] * 5)
        c = make_client(stream, window_len=1)
        c.advance_stream(1000)
        up = c.participate(ModelParams(np.zeros(SHAPE.size), SHAPE), TrainConfig(epochs=1, lr=0.0), 1)
        assert up.fresh_model and up.n_samples == 10


class TestAlpha:
    def test_alpha_from_accuracy(self):
        c = make_client(capacity=100, adaptive_memory=True)
        c.update_alpha(c.theta_stored, accuracy=0.8)
        assert c.alpha == 0.8 and c.buffer.retained_budget == 20

    def test_alpha_boundaries(self):
        c = make_client(capacity=40)
        c.update_alpha(c.theta_stored, accuracy=1.0)
        assert c.buffer.retained_budget == 0
        c.update_alpha(c.theta_stored, accuracy=0.0)
        assert c.buffer.retained_budget == 40

    def test_alpha_evaluates_global(self):
        c = make_client(capacity=30)
        g = ModelParams(np.zeros(SHAPE.size), SHAPE)
        c.update_alpha(g)
        assert c.alpha == pytest.approx(evaluate(g, c.test_set).overall_accuracy)
        assert c.alpha == pytest.approx(1 / 6)


class TestOffline:
    def test_plan_default_and_ineligible(self):
        c = make_client(windows([SIT] * 4), trace=offline_trace(), window_len=1)
        c.advance_stream(100)
        assert c.plan_offline_sessions(1, OfflinePolicy()) == 1
        c.trace = AvailabilityTrace.always_on(10)
        assert c.plan_offline_sessions(1, OfflinePolicy()) == 0

    def test_plan_budget(self):
        c = make_client(windows([SIT] * 60), capacity=100, trace=offline_trace(), window_len=1)
        c.advance_stream(1000)
        assert len(c.buffer) == 60
        assert c.plan_offline_sessions(1, OfflinePolicy(max_sessions=3, compute_budget=100)) == 1

    def test_error_when_online(self):
        c = make_client(windows([SIT] * 4), window_len=1)
        with pytest.raises(SchedulingError):
            c.offline_train(TrainConfig(), 1, 1)

    def test_improving_session_replaces(self):
        stream = windows([c for c in range(6) for _ in range(8)], seed=1)
        c = make_client(stream, capacity=100, trace=offline_trace(), window_len=1)
        c.advance_stream(10_000)
        before = c.stored_score
        c.offline_train(TrainConfig(epochs=20, lr=0.3), 1, 1)
        assert c.stored_score > before

    def test_zero_lr_session(self):
        c = make_client(windows([SIT] * 10), trace=offline_trace(), window_len=1)
        c.advance_stream(100)
        before = c.theta_stored.theta.copy()
        c.offline_train(TrainConfig(epochs=1, lr=0.0), 1, 1)
        assert np.array_equal(c.theta_stored.theta, before)
        assert len(c.stored_history) == 2  # replaced by identical params via the >= branch

    def test_sessions_compose(self):
        stream = windows([c for c in range(6) for _ in range(6)], seed=2)

        def fresh():
            c = make_client(stream, capacity=100, trace=offline_trace(), window_len=1)
            c.advance_stream(10_000)
            return c

        cfg = TrainConfig(epochs=2, batch_size=8, lr=0.2, seed=7)
        a, b = fresh(), fresh()
        a.offline_train(cfg, 3, 1)
        for _ in range(3):
            b.offline_train(cfg, 1, 1)
        assert a.theta_stored.theta.tobytes() == b.theta_stored.theta.tobytes()

    def test_offline_never_uploads_or_touches_buffer(self):
        c = make_client(windows([SIT, UP] * 10), trace=offline_trace(), window_len=1)
        c.advance_stream(100)
        snap = c.buffer.training_set()
        c.offline_train(TrainConfig(epochs=2, lr=0.1), 2, 1)
        assert c.buffer.training_set() == snap

    def test_refresh_alpha_override(self):
        c = make_client(windows([SIT] * 10), trace=offline_trace(), window_len=1,
                        adaptive_memory=True, refresh_alpha_offline=True)
        c.advance_stream(100)
        c.offline_train(TrainConfig(epochs=1, lr=0.1), 1, 1)
        assert c.alpha == pytest.approx(evaluate(c.theta_stored, c.test_set).overall_accuracy)


def test_stored_history_monotone_under_random_calls():
    rng = np.random.default_rng(0)
    stream = windows(list(rng.integers(0, 6, size=300)), seed=4)
    c = make_client(stream, capacity=40, trace=offline_trace(50), window_len=1, gate_uploads=True)
    for r in range(1, 50):
        c.advance_stream(r * 6)
        g = ModelParams(rng.normal(scale=0.5, size=SHAPE.size), SHAPE)
        cfg = TrainConfig(epochs=1, batch_size=8, lr=float(rng.uniform(0, 0.5)), seed=r)
        if len(c.buffer) == 0:
            continue
        if r % 2:
            pre = c.stored_score
            up = c.participate(g, cfg, r)
            assert c.score(up.params) >= pre
        else:
            c.offline_train(cfg, 1, r)
    hist = c.stored_history
    assert all(b >= a for a, b in zip(hist, hist[1:]))
