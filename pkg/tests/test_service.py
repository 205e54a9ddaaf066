import io
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient
from scipy.io import wavfile

from prefcomp.audio import AudioClip
from prefcomp.environment import PairQuery
from prefcomp.errors import ListenerUnavailable
from prefcomp.service import (
    PHASE_EVALUATION,
    PairBroker,
    ServiceListener,
    _server_mu,
    create_app,
)


def make_query(i: int, cr_a=(1.2,), cr_b=(4.8,), n=400):
    t = np.arange(n) / 16000
    clip_a = AudioClip(0.2 * np.sin(2 * np.pi * 300 * t), 16000, id=f"q{i}a")
    clip_b = AudioClip(0.2 * np.sin(2 * np.pi * 600 * t), 16000, id=f"q{i}b")
    return PairQuery(
        clip_id=f"clip{i}", noise_offset=i, cr_a=cr_a, cr_b=cr_b,
        adj_a=(1.0,), adj_b=(4.0,), clip_a=clip_a, clip_b=clip_b,
    )


@pytest.fixture
def broker(tmp_path):
    b = PairBroker(tmp_path / "feedback.jsonl", pairs_per_block=3, blocks=2,
                   side_rng=np.random.default_rng(7))
    b.attach_run()
    return b


@pytest.fixture
def client(broker):
    return TestClient(create_app(broker))


def open_session(client, phase="training_query"):
    resp = client.post("/session", json={"listener": "tester", "phase": phase})
    assert resp.status_code == 200
    return resp.json()["session_id"]


def test_session_requires_active_run(tmp_path):
    broker = PairBroker(tmp_path / "log.jsonl")
    client = TestClient(create_app(broker))
    assert client.post("/session", json={}).status_code == 409


def test_fresh_session_plan(client):
    resp = client.post("/session", json={"listener": "x"})
    body = resp.json()
    assert body["plan"] == {"pairs_per_block": 3, "blocks": 2}
    assert body["labeled"] == 0
    assert body["block"] == 1


def test_concurrent_sessions_isolated(client, broker):
    for i in range(2):
        broker.enqueue(make_query(i), "training_query")
    s1, s2 = open_session(client), open_session(client)
    assert s1 != s2
    p1 = client.get("/pair", params={"session": s1}).json()["pair_id"]
    p2 = client.get("/pair", params={"session": s2}).json()["pair_id"]
    assert p1 != p2
    client.post("/feedback", json={"session": s1, "pair": p1, "choice": "A"})
    assert client.get("/progress", params={"session": s1}).json()["labeled"] == 1
    assert client.get("/progress", params={"session": s2}).json()["labeled"] == 0


def test_pair_idempotent_until_labeled(client, broker):
    broker.enqueue(make_query(0), "training_query")
    session = open_session(client)
    first = client.get("/pair", params={"session": session}).json()
    second = client.get("/pair", params={"session": session}).json()
    assert first["pair_id"] == second["pair_id"]


def test_round_exhaustion_gives_204(client, broker):
    broker.enqueue(make_query(0), "training_query")
    session = open_session(client)
    pair = client.get("/pair", params={"session": session}).json()["pair_id"]
    client.post("/feedback", json={"session": session, "pair": pair, "choice": "EQUAL"})
    assert client.get("/pair", params={"session": session}).status_code == 204


def test_unknown_session_404(client):
    assert client.get("/pair", params={"session": "nope"}).status_code == 404
    assert client.get("/progress", params={"session": "nope"}).status_code == 404


def test_audio_endpoints_serve_equal_length_wavs(client, broker):
    broker.enqueue(make_query(0), "training_query")
    session = open_session(client)
    pair = client.get("/pair", params={"session": session}).json()
    waves = []
    for side in ("audio_a", "audio_b"):
        resp = client.get(pair[side])
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "audio/wav"
        rate, data = wavfile.read(io.BytesIO(resp.content))
        assert rate == 16000
        waves.append(data)
    assert len(waves[0]) == len(waves[1])


def test_feedback_unblinding_mu():
    # spec table: choice A with a swap in effect stores mu=[0,1] in server order
    assert _server_mu("A", swap=False) == (1.0, 0.0)
    assert _server_mu("A", swap=True) == (0.0, 1.0)
    assert _server_mu("B", swap=False) == (0.0, 1.0)
    assert _server_mu("B", swap=True) == (1.0, 0.0)
    assert _server_mu("EQUAL", swap=True) == (0.5, 0.5)
    assert _server_mu("NEITHER", swap=False) is None


def test_feedback_choice_a_with_swap_stored_flipped(client, broker):
    rng = np.random.default_rng(0)
    for i in range(12):
        broker.enqueue(make_query(i), "training_query")
    session = open_session(client)
    for _ in range(12):
        pair_id = client.get("/pair", params={"session": session}).json()["pair_id"]
        client.post("/feedback", json={"session": session, "pair": pair_id, "choice": "A"})
    for rec in broker.dataset_records():
        expected = (0.0, 1.0) if rec["swap"] else (1.0, 0.0)
        assert tuple(rec["server_order_mu"]) == expected
    swaps = [p.swap for p in broker.pairs.values()]
    assert any(swaps) and not all(swaps)  # both presentations occurred


def test_neither_excluded_from_dataset_but_logged(client, broker):
    broker.enqueue(make_query(0), "training_query")
    broker.enqueue(make_query(1), "training_query")
    session = open_session(client)
    p1 = client.get("/pair", params={"session": session}).json()["pair_id"]
    client.post("/feedback", json={"session": session, "pair": p1, "choice": "NEITHER"})
    p2 = client.get("/pair", params={"session": session}).json()["pair_id"]
    client.post("/feedback", json={"session": session, "pair": p2, "choice": "EQUAL"})
    records = broker.dataset_records()
    assert len(records) == 1  # NEITHER filtered out
    raw = broker.log_path.read_text().splitlines()
    assert len(raw) == 2  # but still logged


def test_double_feedback_409(client, broker):
    broker.enqueue(make_query(0), "training_query")
    session = open_session(client)
    pair = client.get("/pair", params={"session": session}).json()["pair_id"]
    body = {"session": session, "pair": pair, "choice": "A"}
    assert client.post("/feedback", json=body).status_code == 200
    assert client.post("/feedback", json=body).status_code == 409


def test_feedback_unknown_pair_404(client, broker):
    session = open_session(client)
    resp = client.post(
        "/feedback", json={"session": session, "pair": "p99999", "choice": "A"}
    )
    assert resp.status_code == 404


def test_block_advance_and_break_flag(client, broker):
    for i in range(4):
        broker.enqueue(make_query(i), "training_query")
    session = open_session(client)
    for i in range(3):  # pairs_per_block == 3
        pair = client.get("/pair", params={"session": session}).json()["pair_id"]
        client.post("/feedback", json={"session": session, "pair": pair, "choice": "EQUAL"})
    progress = client.get("/progress", params={"session": session}).json()
    assert progress["break_due"] is True
    assert progress["block"] == 2


def test_results_before_evaluation_409(client, broker):
    session = open_session(client)
    assert client.get("/results", params={"session": session}).status_code == 409


def test_results_tally_conservation(client, broker):
    queries = [make_query(i) for i in range(6)]
    for q in queries:
        q.roles = ("personalized", "reference")
        broker.enqueue(q, PHASE_EVALUATION, roles=q.roles)
    session = open_session(client, phase=PHASE_EVALUATION)
    choices = ["A", "B", "EQUAL", "A", "NEITHER", "A"]
    for choice in choices:
        pair = client.get("/pair", params={"session": session}).json()["pair_id"]
        client.post("/feedback", json={"session": session, "pair": pair, "choice": choice})
    tally = client.get("/results", params={"session": session}).json()
    total = tally["personalized"] + tally["reference"] + tally["equal"] + tally["neither"]
    assert total == tally["pairs"] == 6
    assert sum(tally["percent"].values()) == pytest.approx(100.0)
    assert tally["equal"] == 1 and tally["neither"] == 1


def test_durability_replay_reconstructs_dataset(tmp_path):
    path = tmp_path / "feedback.jsonl"
    broker = PairBroker(path, side_rng=np.random.default_rng(1))
    broker.attach_run()
    client = TestClient(create_app(broker))
    session = open_session(client)
    for i in range(5):
        broker.enqueue(make_query(i), "training_query")
    for choice in ("A", "B", "EQUAL", "A", "NEITHER"):
        pair = client.get("/pair", params={"session": session}).json()["pair_id"]
        client.post("/feedback", json={"session": session, "pair": pair, "choice": choice})
    before = broker.dataset_records()

    reborn = PairBroker(path, side_rng=np.random.default_rng(99))
    assert reborn.dataset_records() == before


def test_replayed_pairs_resolve_without_serving(tmp_path):
    path = tmp_path / "feedback.jsonl"
    broker = PairBroker(path, side_rng=np.random.default_rng(2))
    broker.attach_run()
    client = TestClient(create_app(broker))
    session = open_session(client)
    query = make_query(3)
    broker.enqueue(query, "training_query")
    pair = client.get("/pair", params={"session": session}).json()["pair_id"]
    client.post("/feedback", json={"session": session, "pair": pair, "choice": "B"})
    first_choice = broker.wait_for_label(pair, timeout_s=1.0)

    # restart: same provenance enqueued again resolves instantly from the log
    reborn = PairBroker(path, side_rng=np.random.default_rng(3))
    reborn.attach_run()
    pair_id = reborn.enqueue(make_query(3), "training_query")
    assert reborn.wait_for_label(pair_id, timeout_s=0.01) == first_choice
    assert len(reborn.pending) == 0


def test_service_listener_roundtrip(broker):
    client = TestClient(create_app(broker))
    listener = ServiceListener(broker, timeout_s=5.0)
    session = open_session(client)

    def answer_all():
        for choice in ("B", "EQUAL"):
            while True:
                resp = client.get("/pair", params={"session": session})
                if resp.status_code == 200:
                    break
            pair = resp.json()["pair_id"]
            client.post(
                "/feedback", json={"session": session, "pair": pair, "choice": choice}
            )

    thread = threading.Thread(target=answer_all)
    thread.start()
    choices = listener.label_batch([make_query(0), make_query(1)])
    thread.join()
    assert choices[1] == "EQUAL"
    assert choices[0] in ("A", "B")  # un-swapped into server order


def test_service_listener_timeout_raises(broker):
    listener = ServiceListener(broker, timeout_s=0.05)
    with pytest.raises(ListenerUnavailable):
        listener.label(make_query(0))


def test_blinding_statistics_invariant_to_side_seed(tmp_path):
    """A listener judging by content yields identical server-order label
    counts regardless of the side-randomization seed."""
    counts = []
    for seed in (1, 2):
        broker = PairBroker(tmp_path / f"fb{seed}.jsonl", side_rng=np.random.default_rng(seed))
        broker.attach_run()
        client = TestClient(create_app(broker))
        session = open_session(client)
        # content rule: the side rendered from cr (4.8,) is always preferred
        for i in range(24):
            broker.enqueue(make_query(i), "training_query")
        for _ in range(24):
            pair_id = client.get("/pair", params={"session": session}).json()["pair_id"]
            pair = broker.pairs[pair_id]
            # peek server-side (the test is the server here): which presented
            # side carries the preferred cr_b = (4.8,) rendering?
            preferred_presented = "A" if pair.swap else "B"
            client.post(
                "/feedback",
                json={"session": session, "pair": pair_id, "choice": preferred_presented},
            )
        records = broker.dataset_records()
        counts.append(sum(1 for r in records if tuple(r["server_order_mu"]) == (0.0, 1.0)))
    # every pair prefers the cr_b side in server order, under either seed
    assert counts[0] == counts[1] == 24


def test_full_protocol_through_service(fixture_corpus, tmp_path):
    """Serve-mode integration: the protocol thread blocks on the broker while
    a scripted client answers every pair as the persona oracle would, judging
    the *presented* order; the stored labels must come back unblinded."""
    import time

    from prefcomp.orchestrator import desk_run_config, run_protocol
    from prefcomp.simuser import answer as sim_answer, builtin_profiles

    corpus_dir, noise_path = fixture_corpus
    cfg = desk_run_config(corpus_dir, noise_path, user="4", seed=4, n_episodes=4)
    cfg.protocol.warmup_steps = 12
    cfg.protocol.n_initial_pairs = 10
    cfg.protocol.finetune_rounds = 1
    cfg.protocol.queries_per_round = 4
    cfg.protocol.finetune_batches = 2
    cfg.protocol.eval_pairs = 6
    cfg.reward.max_epochs = 6

    broker = PairBroker(tmp_path / "fb.jsonl", side_rng=np.random.default_rng(5))
    broker.attach_run()
    client = TestClient(create_app(broker))
    listener = ServiceListener(broker, timeout_s=60.0)
    profile = builtin_profiles()["4"]
    oracle_rng = np.random.default_rng(0)

    box = {}

    def protocol():
        box["result"] = run_protocol(cfg, tmp_path / "run", listener=listener)

    thread = threading.Thread(target=protocol, daemon=True)
    thread.start()
    session = client.post("/session", json={"listener": "scripted"}).json()["session_id"]
    deadline = __import__("time").monotonic() + 120
    answered = {}
    while thread.is_alive():
        if time.monotonic() > deadline:
            raise TimeoutError("protocol did not finish")
        resp = client.get("/pair", params={"session": session})
        if resp.status_code != 200:
            time.sleep(0.01)
            continue
        pair_id = resp.json()["pair_id"]
        pair = broker.pairs[pair_id]
        adj_first, adj_second = pair.query.adj_a, pair.query.adj_b
        if pair.swap:
            adj_first, adj_second = adj_second, adj_first
        choice = sim_answer(profile, adj_first, adj_second, oracle_rng).choice
        client.post("/feedback", json={"session": session, "pair": pair_id, "choice": choice})
        answered[pair_id] = (choice, pair.swap)
    thread.join(timeout=5)
    assert "result" in box
    assert box["result"].tally["pairs"] == cfg.protocol.eval_pairs

    # blinding inverted correctly: stored server-order mu matches the oracle's
    # unblinded preference for every labeled pair
    for rec in broker.dataset_records():
        choice, swap = answered[rec["pair"]]
        if choice == "EQUAL":
            assert tuple(rec["server_order_mu"]) == (0.5, 0.5)
        else:
            preferred_first = (choice == "A") != swap
            expected = (1.0, 0.0) if preferred_first else (0.0, 1.0)
            assert tuple(rec["server_order_mu"]) == expected
    # the orchestrator's dataset manifest folded the same labels
    manifest = (tmp_path / "run" / "dataset_manifest.jsonl").read_text().splitlines()
    assert len(manifest) == cfg.protocol.n_initial_pairs + cfg.protocol.queries_per_round + 0
