import threading
import time

import pytest
import requests

from poolforge import (
    AnnotationError,
    AnnotationServer,
    AnnotationSession,
    StrategyConfig,
    init_run,
    run_loop,
    serve_annotation,
)


@pytest.fixture()
def server(small_pool):
    session = AnnotationSession(small_pool.label_words)
    srv = AnnotationServer(session, bind="127.0.0.1:0")
    srv.start()
    yield srv, session, f"http://{srv.address}"
    srv.stop()


class TestEndpoints:
    def test_idle_status_and_empty_batch(self, server):
        _, _, base = server
        status = requests.get(f"{base}/api/status", timeout=5).json()
        assert status == {"round": -1, "phase": "idle", "pending_ids": []}
        assert requests.get(f"{base}/api/batch", timeout=5).json() == []

    def test_labelset(self, server, small_pool):
        _, _, base = server
        assert requests.get(f"{base}/api/labelset", timeout=5).json() \
            == small_pool.label_words

    def test_post_without_active_batch_is_409(self, server):
        _, _, base = server
        resp = requests.post(f"{base}/api/labels", json=[{"id": 1, "label": 0}],
                             timeout=5)
        assert resp.status_code == 409

    def test_malformed_payload_is_422(self, server, small_pool):
        _, session, base = server
        session.publish(0, [0, 1], small_pool)
        for bad in ("not json at all", b"[{}]", b'{"id": 1}'):
            resp = requests.post(f"{base}/api/labels", data=bad,
                                 headers={"Content-Type": "application/json"},
                                 timeout=5)
            assert resp.status_code == 422, bad

    def test_label_flow(self, server, small_pool):
        _, session, base = server
        session.publish(2, [3, 4, 5], small_pool)
        batch = requests.get(f"{base}/api/batch", timeout=5).json()
        assert [item["id"] for item in batch] == [3, 4, 5]
        assert all(item["text"] for item in batch)

        resp = requests.post(
            f"{base}/api/labels",
            json=[{"id": 3, "label": 1}, {"id": 99, "label": 0},
                  {"id": 4, "label": 9}],
            timeout=5,
        ).json()
        assert resp["accepted"] == [3]
        reasons = {r["id"]: r["reason"] for r in resp["rejected"]}
        assert "not in active batch" in reasons[99]
        assert "out of range" in reasons[4]

        status = requests.get(f"{base}/api/status", timeout=5).json()
        assert status["phase"] == "labeling"
        assert status["pending_ids"] == [4, 5]

        requests.post(f"{base}/api/labels",
                      json=[{"id": 4, "label": 0}, {"id": 5, "label": 2}], timeout=5)
        got = session.wait_for_labels(timeout=5)
        assert got == [(3, 1), (4, 0), (5, 2)]

    def test_duplicate_submission_overwrites(self, server, small_pool):
        _, session, base = server
        session.publish(0, [7, 8], small_pool)
        requests.post(f"{base}/api/labels", json=[{"id": 7, "label": 0}], timeout=5)
        resp = requests.post(f"{base}/api/labels", json=[{"id": 7, "label": 2}],
                             timeout=5).json()
        assert resp["accepted"] == [7]
        requests.post(f"{base}/api/labels", json=[{"id": 8, "label": 1}], timeout=5)
        assert session.wait_for_labels(timeout=5) == [(7, 2), (8, 1)]

    def test_unknown_path_404(self, server):
        _, _, base = server
        assert requests.get(f"{base}/api/nope", timeout=5).status_code == 404


class TestSessionDirect:
    def test_publish_requires_texts(self, small_pool):
        from poolforge import PoolArtifacts

        bare = PoolArtifacts(
            sample_ids=small_pool.sample_ids.copy(),
            knowledge_features=small_pool.knowledge_features.copy(),
            encoder_features=small_pool.encoder_features.copy(),
            word_probs=small_pool.word_probs.copy(),
            label_words=list(small_pool.label_words),
        ).validate()
        session = AnnotationSession(bare.label_words)
        with pytest.raises(AnnotationError, match="texts"):
            session.publish(0, [0], bare)

    def test_wait_timeout(self, small_pool):
        session = AnnotationSession(small_pool.label_words)
        session.publish(0, [0], small_pool)
        with pytest.raises(AnnotationError, match="abandoned"):
            session.wait_for_labels(timeout=0.05)

    def test_serve_annotation_requires_texts(self, small_pool):
        from poolforge import PoolArtifacts

        bare = PoolArtifacts(
            sample_ids=small_pool.sample_ids.copy(),
            knowledge_features=small_pool.knowledge_features.copy(),
            encoder_features=small_pool.encoder_features.copy(),
            word_probs=small_pool.word_probs.copy(),
            label_words=list(small_pool.label_words),
        ).validate()
        with pytest.raises(AnnotationError, match="texts"):
            serve_annotation(bare, "127.0.0.1:0")


class TestServeModeLoop:
    def test_human_labels_drive_rounds(self, pool_dir, tmp_path, small_pool):
        cfg = StrategyConfig(strategy="joint", b=4, seed=2).validate()
        state = init_run(pool_dir, cfg, t=2, initial_size=8, seed=2,
                         run_dir=tmp_path / "run")
        session = AnnotationSession(small_pool.label_words)
        server = AnnotationServer(session, bind="127.0.0.1:0")
        server.start()
        base = f"http://{server.address}"
        labeled_by_annotator = []

        def annotator():
            deadline = time.time() + 30
            rounds_done = 0
            while rounds_done < 2 and time.time() < deadline:
                status = requests.get(f"{base}/api/status", timeout=5).json()
                if status["phase"] == "labeling" and status["pending_ids"]:
                    batch = requests.get(f"{base}/api/batch", timeout=5).json()
                    payload = [{"id": item["id"], "label": 0} for item in batch]
                    requests.post(f"{base}/api/labels", json=payload, timeout=5)
                    labeled_by_annotator.extend(item["id"] for item in batch)
                    rounds_done += 1
                    time.sleep(0.02)
                else:
                    time.sleep(0.01)

        thread = threading.Thread(target=annotator, daemon=True)
        thread.start()
        try:
            state = run_loop(state, "service", session=session)
        finally:
            session.finish()
            server.stop()
            thread.join(timeout=10)

        assert state.round_index == 2
        assert len(state.labeled) == 8 + 2 * 4
        human = [e for e in state.labeled.entries if e.provenance == "human"]
        assert sorted(e.sample_id for e in human) == sorted(labeled_by_annotator)
        assert all(e.label == 0 for e in human)
