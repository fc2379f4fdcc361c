import json

import pytest
from fastapi.testclient import TestClient

from clinasr.models import LabeledExample, write_examples
from clinasr.service import AnnotationStore, ServiceConfig, create_app
from clinasr.stats import LabelSeries, cohens_kappa


def _examples(n=10):
    return [
        LabeledExample(
            id=f"ex{i:02d}",
            context=(("doctor", "any pain today"),),
            gold_final=f"gold text {i}",
            hyp_final=f"hyp text {i}",
        )
        for i in range(n)
    ]


TOKENS = {"ann_a": "token-a", "ann_b": "token-b"}


@pytest.fixture()
def service(tmp_path):
    examples_path = tmp_path / "examples.jsonl"
    write_examples(examples_path, _examples())
    config = ServiceConfig(
        data_dir=tmp_path / "data",
        examples_path=examples_path,
        tokens=dict(TOKENS),
    )
    return TestClient(create_app(config)), tmp_path


def _submit(client, annotator, example_id, label, justification=""):
    return client.post(
        "/api/labels",
        json={
            "example_id": example_id,
            "annotator_id": annotator,
            "label": label,
            "justification": justification,
        },
        headers={"X-Annotator-Token": TOKENS[annotator]},
    )


def _next(client, annotator):
    return client.get(
        f"/api/tasks/next?annotator={annotator}",
        headers={"X-Annotator-Token": TOKENS[annotator]},
    )


class TestTasks:
    def test_auth_required(self, service):
        client, _ = service
        assert client.get("/api/tasks/next?annotator=ann_a").status_code == 401
        bad = client.get(
            "/api/tasks/next?annotator=ann_a",
            headers={"X-Annotator-Token": "wrong"},
        )
        assert bad.status_code == 401

    def test_token_must_match_annotator(self, service):
        client, _ = service
        resp = client.get(
            "/api/tasks/next?annotator=ann_b",
            headers={"X-Annotator-Token": TOKENS["ann_a"]},
        )
        assert resp.status_code == 403

    def test_idempotent_head_until_submission(self, service):
        client, _ = service
        first = _next(client, "ann_a").json()["task"]["id"]
        again = _next(client, "ann_a").json()["task"]["id"]
        assert first == again
        _submit(client, "ann_a", first, 0)
        third = _next(client, "ann_a").json()["task"]["id"]
        assert third != first

    def test_full_coverage_then_none(self, service):
        client, _ = service
        seen = []
        for _ in range(10):
            task = _next(client, "ann_a").json()["task"]
            seen.append(task["id"])
            _submit(client, "ann_a", task["id"], 0)
        assert sorted(seen) == [f"ex{i:02d}" for i in range(10)]
        assert _next(client, "ann_a").json()["task"] is None

    def test_independent_orders_per_annotator(self, service):
        client, _ = service
        order_a = []
        order_b = []
        for _ in range(10):
            a = _next(client, "ann_a").json()["task"]["id"]
            b = _next(client, "ann_b").json()["task"]["id"]
            order_a.append(a)
            order_b.append(b)
            _submit(client, "ann_a", a, 0)
            _submit(client, "ann_b", b, 0)
        assert sorted(order_a) == sorted(order_b)
        assert order_a != order_b  # seeded by annotator id


class TestSubmission:
    def test_valid_label_two_with_justification(self, service):
        client, _ = service
        resp = _submit(client, "ann_a", "ex00", 2, "meaning inverted")
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok"}

    def test_label_three_rejected(self, service):
        client, _ = service
        assert _submit(client, "ann_a", "ex00", 3, "x").status_code == 400

    def test_label_one_requires_justification(self, service):
        client, _ = service
        resp = _submit(client, "ann_a", "ex00", 1, "")
        assert resp.status_code == 400
        assert "justification" in resp.json()["detail"]

    def test_label_zero_justification_optional(self, service):
        client, _ = service
        assert _submit(client, "ann_a", "ex00", 0).status_code == 200

    def test_unknown_example(self, service):
        client, _ = service
        assert _submit(client, "ann_a", "nope", 0).status_code == 404

    def test_resubmission_replaces_live_record(self, service):
        client, tmp = service
        _submit(client, "ann_a", "ex00", 0)
        _submit(client, "ann_a", "ex01", 0)
        _submit(client, "ann_b", "ex00", 0)
        _submit(client, "ann_b", "ex01", 0)
        _submit(client, "ann_a", "ex00", 2, "changed my mind")
        report = client.get(
            "/api/agreement", headers={"X-Annotator-Token": TOKENS["ann_a"]}
        ).json()
        assert report["percent_agreement"] == 0.5


class TestDurability:
    def test_records_survive_restart(self, tmp_path):
        examples = _examples(3)
        store = AnnotationStore(tmp_path, examples)
        from clinasr.models import AnnotationRecord

        store.submit_label(AnnotationRecord("ex00", "ann_a", 2, "risky", "t0"))
        store.submit_label(AnnotationRecord("ex01", "ann_a", 0, "", "t1"))
        reopened = AnnotationStore(tmp_path, examples)
        assert ("ex00", "ann_a") in reopened.live
        assert reopened.live[("ex00", "ann_a")].label == 2
        assert ("ex01", "ann_a") in reopened.live

    def test_archive_preserved_in_log_until_compaction(self, tmp_path):
        from clinasr.models import AnnotationRecord

        examples = _examples(1)
        store = AnnotationStore(tmp_path, examples)
        store.submit_label(AnnotationRecord("ex00", "ann_a", 0, "", "t0"))
        store.submit_label(AnnotationRecord("ex00", "ann_a", 2, "revised", "t1"))
        reopened = AnnotationStore(tmp_path, examples)
        assert len(reopened.archived) == 1
        assert reopened.live[("ex00", "ann_a")].label == 2
        reopened.compact()
        compacted = AnnotationStore(tmp_path, examples)
        assert compacted.archived == []
        assert compacted.live[("ex00", "ann_a")].label == 2


class TestAgreement:
    def test_insufficient_overlap(self, service):
        client, _ = service
        _submit(client, "ann_a", "ex00", 0)
        resp = client.get(
            "/api/agreement", headers={"X-Annotator-Token": TOKENS["ann_a"]}
        )
        assert resp.status_code == 409

    def test_identical_labels(self, service):
        client, _ = service
        for ex in ("ex00", "ex01", "ex02"):
            _submit(client, "ann_a", ex, 2, "j")
            _submit(client, "ann_b", ex, 2, "j")
        report = client.get(
            "/api/agreement", headers={"X-Annotator-Token": TOKENS["ann_a"]}
        ).json()
        assert report["percent_agreement"] == 1.0
        assert report["kappa"] == 1.0

    def test_kappa_fixture_via_endpoint(self, service):
        client, _ = service
        labels_a = [0, 0, 1, 2]
        labels_b = [0, 1, 1, 2]
        for i, (la, lb) in enumerate(zip(labels_a, labels_b)):
            ex = f"ex{i:02d}"
            _submit(client, "ann_a", ex, la, "j" if la else "")
            _submit(client, "ann_b", ex, lb, "j" if lb else "")
        report = client.get(
            "/api/agreement", headers={"X-Annotator-Token": TOKENS["ann_a"]}
        ).json()
        assert report["percent_agreement"] == 0.75
        assert report["kappa"] == pytest.approx(0.6364, abs=1e-4)
        # cross-module consistency with the stats computation
        ids = tuple(f"ex{i:02d}" for i in range(4))
        want = cohens_kappa(LabelSeries(ids, tuple(labels_a)),
                            LabelSeries(ids, tuple(labels_b)))
        assert report["kappa"] == pytest.approx(want)


class TestAdjudication:
    def _disagreements(self, client):
        # ex00: (0 vs 1); ex01: (0 vs 2); ex02 agreed
        _submit(client, "ann_a", "ex00", 0)
        _submit(client, "ann_b", "ex00", 1, "subtle change")
        _submit(client, "ann_a", "ex01", 0)
        _submit(client, "ann_b", "ex01", 2, "dangerous")
        _submit(client, "ann_a", "ex02", 1, "minor")
        _submit(client, "ann_b", "ex02", 1, "minor too")

    def test_queue_ordered_by_distance_then_id(self, service):
        client, _ = service
        self._disagreements(client)
        bundles = client.get(
            "/api/adjudication", headers={"X-Annotator-Token": TOKENS["ann_a"]}
        ).json()["bundles"]
        assert [b["example_id"] for b in bundles] == ["ex01", "ex00"]
        assert bundles[0]["max_label_distance"] == 2
        assert len(bundles[0]["records"]) == 2

    def test_resolution_removes_from_queue_and_exports_gold(self, service):
        client, _ = service
        self._disagreements(client)
        resp = client.post(
            "/api/adjudication/resolve",
            json={"example_id": "ex01", "final_label": 2,
                  "resolver_ids": ["ann_a", "ann_b"], "note": "agreed: significant"},
            headers={"X-Annotator-Token": TOKENS["ann_a"]},
        )
        assert resp.status_code == 200
        bundles = client.get(
            "/api/adjudication", headers={"X-Annotator-Token": TOKENS["ann_a"]}
        ).json()["bundles"]
        assert [b["example_id"] for b in bundles] == ["ex00"]
        gold = client.get(
            "/api/export/gold", headers={"X-Annotator-Token": TOKENS["ann_a"]}
        ).json()["labels"]
        by_id = {g["example_id"]: g for g in gold}
        assert by_id["ex01"]["label"] == 2  # adjudicated
        assert by_id["ex02"]["label"] == 1  # unanimous auto-promotion
        assert "ex00" not in by_id  # unresolved disagreement stays out

    def test_confirming_agreed_example_allowed(self, service):
        client, _ = service
        self._disagreements(client)
        resp = client.post(
            "/api/adjudication/resolve",
            json={"example_id": "ex02", "final_label": 1,
                  "resolver_ids": ["ann_a"], "note": "confirmed"},
            headers={"X-Annotator-Token": TOKENS["ann_a"]},
        )
        assert resp.status_code == 200

    def test_double_resolve_replaces_with_audit_trail(self, service):
        client, tmp = service
        self._disagreements(client)
        for label in (1, 2):
            client.post(
                "/api/adjudication/resolve",
                json={"example_id": "ex01", "final_label": label,
                      "resolver_ids": ["ann_a"], "note": f"take {label}"},
                headers={"X-Annotator-Token": TOKENS["ann_a"]},
            )
        gold = client.get(
            "/api/export/gold", headers={"X-Annotator-Token": TOKENS["ann_a"]}
        ).json()["labels"]
        by_id = {g["example_id"]: g for g in gold}
        assert by_id["ex01"]["label"] == 2
        log = (tmp / "data" / "events.jsonl").read_text()
        assert log.count('"type": "resolve"') == 2

    def test_resolve_unknown_example(self, service):
        client, _ = service
        resp = client.post(
            "/api/adjudication/resolve",
            json={"example_id": "nope", "final_label": 1, "resolver_ids": ["a"]},
            headers={"X-Annotator-Token": TOKENS["ann_a"]},
        )
        assert resp.status_code == 404

    def test_resolve_invalid_label(self, service):
        client, _ = service
        self._disagreements(client)
        resp = client.post(
            "/api/adjudication/resolve",
            json={"example_id": "ex01", "final_label": 9, "resolver_ids": ["a"]},
            headers={"X-Annotator-Token": TOKENS["ann_a"]},
        )
        assert resp.status_code == 400
