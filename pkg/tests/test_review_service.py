import json
import threading
import urllib.error
import urllib.request

import pytest

from leakcheck.errors import ReviewError
from leakcheck.pipeline import AuditConfig, run_audit, write_report
from leakcheck.registry import load_registry
from leakcheck.review import ReviewSession
from leakcheck.service import ReviewServer, load_session, make_server

from conftest import build_audit_fixture


@pytest.fixture
def world(tmp_path):
    fixture = build_audit_fixture(tmp_path / "world")
    registry = load_registry(fixture.registry_path)
    config = AuditConfig(
        synthetic_id=fixture.synthetic_id,
        real_id=fixture.real_id,
        benchmark_id=fixture.benchmark_id,
        k=5,
        target_far=0.01,
        required_reviewers=2,
    )
    out = tmp_path / "out"
    report = run_audit(config, registry, out)
    write_report(report, out / "report.json")
    return {
        "fixture": fixture,
        "registry": registry,
        "out": out,
        "queue_path": out / "queue.jsonl",
        "report_path": out / "report.json",
        "labels_path": out / "labels.jsonl",
    }


def fresh_session(world) -> ReviewSession:
    return load_session(world["queue_path"], world["labels_path"], world["report_path"])


class TestSession:
    def test_fresh_reviewer_gets_rank_one(self, world):
        session = fresh_session(world)
        entry = session.next_pair("alice")
        assert entry.rank == 1

    def test_exhausted_reviewer_gets_done(self, world):
        session = fresh_session(world)
        for _ in range(len(session.queue)):
            entry = session.next_pair("alice")
            session.submit_label(entry.pair_id, "alice", "uncertain")
        assert session.next_pair("alice") is None

    def test_two_reviewers_interleaved_see_all_pairs_once(self, world):
        session = fresh_session(world)
        seen = {"alice": [], "bob": []}
        reviewers = ["alice", "bob", "bob", "alice", "alice", "bob"]
        while any(session.next_pair(r) is not None for r in ("alice", "bob")):
            for reviewer in reviewers:
                entry = session.next_pair(reviewer)
                if entry is not None:
                    seen[reviewer].append(entry.pair_id)
                    session.submit_label(entry.pair_id, reviewer, "leaked")
        all_ids = [e.pair_id for e in session.queue]
        assert seen["alice"] == all_ids
        assert seen["bob"] == all_ids

    def test_submit_appends_durably_before_ack(self, world):
        session = fresh_session(world)
        entry = session.next_pair("alice")
        record, appended = session.submit_label(entry.pair_id, "alice", "leaked")
        assert appended
        on_disk = [
            json.loads(line)
            for line in world["labels_path"].read_text().splitlines()
            if line
        ]
        assert on_disk[-1]["record_id"] == record.record_id
        assert on_disk[-1]["label"] == "leaked"

    def test_duplicate_submission_is_noop(self, world):
        session = fresh_session(world)
        entry = session.next_pair("alice")
        r1, appended1 = session.submit_label(entry.pair_id, "alice", "leaked")
        r2, appended2 = session.submit_label(entry.pair_id, "alice", "leaked")
        assert appended1 and not appended2
        assert r1.record_id == r2.record_id
        assert len(session.log.records) == 1

    def test_changed_label_supersedes(self, world):
        session = fresh_session(world)
        entry = session.next_pair("alice")
        r1, _ = session.submit_label(entry.pair_id, "alice", "leaked")
        r2, appended = session.submit_label(entry.pair_id, "alice", "child")
        assert appended
        assert r2.supersedes == r1.record_id
        report = session.report()
        assert report.review["tallies"] == {
            "leaked": 0,
            "child": 1,
            "no_face": 0,
            "not_same_identity": 0,
            "uncertain": 0,
        }

    def test_invalid_label(self, world):
        session = fresh_session(world)
        entry = session.next_pair("alice")
        with pytest.raises(ReviewError) as err:
            session.submit_label(entry.pair_id, "alice", "maybe")
        assert err.value.code == "invalid-label"

    def test_unknown_pair(self, world):
        session = fresh_session(world)
        with pytest.raises(ReviewError) as err:
            session.submit_label("s999-r999", "alice", "leaked")
        assert err.value.code == "unknown-pair"

    def test_empty_queue_rejected(self, world, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(ReviewError) as err:
            load_session(empty, world["labels_path"], world["report_path"])
        assert err.value.code == "queue-not-loaded"

    def test_empty_log_report_has_zero_tallies(self, world):
        session = fresh_session(world)
        report = session.report()
        assert sum(report.review["tallies"].values()) == 0
        assert report.review["reviewed_pairs"] == 0

    def test_tallies_sum_net_of_supersessions(self, world):
        session = fresh_session(world)
        ids = [e.pair_id for e in session.queue]
        session.submit_label(ids[0], "alice", "leaked")
        session.submit_label(ids[1], "alice", "no_face")
        session.submit_label(ids[0], "alice", "uncertain")  # supersedes the first
        report = session.report()
        assert sum(report.review["tallies"].values()) == 2
        assert len(session.log.records) == 3

    def test_replay_reproduces_report(self, world):
        session = fresh_session(world)
        script = [
            ("alice", "leaked"),
            ("bob", "leaked"),
            ("alice", "child"),
            ("bob", "uncertain"),
        ]
        for reviewer, value in script:
            entry = session.next_pair(reviewer)
            session.submit_label(entry.pair_id, reviewer, value)
        first = session.report().to_json_dict()
        # a brand-new session over the same files must fold to the same report
        second = fresh_session(world).report().to_json_dict()
        assert first == second


@pytest.fixture
def server(world):
    session = fresh_session(world)
    srv = make_server("127.0.0.1", 0, session, registry=world["registry"], ui_dir=None)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()
    thread.join(timeout=5)


def get(srv: ReviewServer, path: str):
    port = srv.server_address[1]
    try:
        with urllib.request.urlopen(f"http://127.0.0.1:{port}{path}") as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as err:
        return err.code, err.read()


def get_json(srv, path):
    status, body = get(srv, path)
    return status, json.loads(body)


def post_json(srv: ReviewServer, path: str, obj: dict):
    port = srv.server_address[1]
    data = json.dumps(obj).encode("utf-8")
    req = urllib.request.Request(
        f"http://127.0.0.1:{port}{path}",
        data=data,
        headers={"Content-Type": "application/json"},
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


class TestHttp:
    def test_next_then_label_then_done(self, server):
        status, doc = get_json(server, "/api/queue/next?reviewer=alice")
        assert status == 200 and doc["done"] is False and doc["rank"] == 1
        total = doc["progress"]["total"]
        for _ in range(total):
            status, doc = get_json(server, "/api/queue/next?reviewer=alice")
            assert doc["done"] is False
            status, ack = post_json(
                server,
                "/api/labels",
                {"pair_id": doc["pair_id"], "reviewer_id": "alice", "label": "uncertain"},
            )
            assert status == 200 and ack["ok"] is True
        status, doc = get_json(server, "/api/queue/next?reviewer=alice")
        assert doc["done"] is True
        assert doc["progress"]["labeled"] == total

    def test_duplicate_post_is_idempotent(self, server):
        _, doc = get_json(server, "/api/queue/next?reviewer=bob")
        payload = {"pair_id": doc["pair_id"], "reviewer_id": "bob", "label": "leaked"}
        _, first = post_json(server, "/api/labels", payload)
        _, second = post_json(server, "/api/labels", payload)
        assert first["duplicate"] is False
        assert second["duplicate"] is True
        assert first["record_id"] == second["record_id"]
        assert len(server.session.log.records) == 1

    def test_invalid_label_is_400(self, server):
        _, doc = get_json(server, "/api/queue/next?reviewer=bob")
        status, body = post_json(
            server,
            "/api/labels",
            {"pair_id": doc["pair_id"], "reviewer_id": "bob", "label": "maybe"},
        )
        assert status == 400 and body["error"] == "invalid-label"

    def test_unknown_pair_is_404(self, server):
        status, body = post_json(
            server,
            "/api/labels",
            {"pair_id": "s9-r99", "reviewer_id": "bob", "label": "leaked"},
        )
        assert status == 404 and body["error"] == "unknown-pair"

    def test_report_endpoint_reflects_labels(self, server):
        _, doc = get_json(server, "/api/queue/next?reviewer=carol")
        post_json(
            server,
            "/api/labels",
            {"pair_id": doc["pair_id"], "reviewer_id": "carol", "label": "child"},
        )
        status, report = get_json(server, "/api/report")
        assert status == 200
        assert report["review"]["tallies"]["child"] == 1

    def test_pair_detail(self, server):
        _, doc = get_json(server, "/api/queue/next?reviewer=dave")
        status, detail = get_json(server, f"/api/pairs/{doc['pair_id']}")
        assert status == 200
        assert detail["pair_id"] == doc["pair_id"]
        status, _ = get_json(server, "/api/pairs/s77-r77")
        assert status == 404

    def test_reviewer_param_required(self, server):
        status, body = get_json(server, "/api/queue/next")
        assert status == 400

    def test_image_serving(self, server):
        _, doc = get_json(server, "/api/queue/next?reviewer=erin")
        status, body = get(server, f"/images/synthia/{doc['synth_path']}")
        assert status == 200
        assert body.startswith(b"PNGDATA")
        status, body = get(server, f"/images/realdata/{doc['real_path']}")
        assert status == 200

    def test_image_traversal_blocked(self, server):
        status, body = get(server, "/images/realdata/%2e%2e/registry.json")
        assert status == 404
        status, body = get(server, "/images/realdata/../registry.json")
        assert status == 404

    def test_unknown_image_dataset(self, server):
        status, body = get_json(server, "/images/ghost/row0000.png")
        assert status == 404 and body["error"] == "missing-dataset"

    def test_fallback_page_without_ui(self, server):
        status, body = get(server, "/")
        assert status == 200
        assert b"leakcheck" in body

    def test_static_ui_dir(self, world):
        ui = world["out"] / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html>review app</html>")
        (ui / "app.js").write_text("console.log('hi')")
        session = fresh_session(world)
        srv = make_server("127.0.0.1", 0, session, ui_dir=ui)
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        try:
            status, body = get(srv, "/")
            assert status == 200 and b"review app" in body
            status, body = get(srv, "/app.js")
            assert status == 200 and b"console" in body
            status, _ = get(srv, "/../conftest.py")
            assert status == 404
        finally:
            srv.shutdown()
            srv.server_close()
            thread.join(timeout=5)

    def test_concurrent_submissions_all_land(self, server):
        ids = [e.pair_id for e in server.session.queue]

        def worker(reviewer):
            for pair_id in ids:
                post_json(
                    server,
                    "/api/labels",
                    {"pair_id": pair_id, "reviewer_id": reviewer, "label": "uncertain"},
                )

        threads = [threading.Thread(target=worker, args=(f"rev{i}",)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(server.session.log.records) == 4 * len(ids)
        _, report = get_json(server, "/api/report")
        assert report["review"]["tallies"]["uncertain"] == 4 * len(ids)
