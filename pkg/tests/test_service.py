"""Event store, batch gates, and the annotation HTTP service."""

import itertools
import json

import pytest
import requests

from nlekit.analysis import AnnotationRecord, normalize_rating
from nlekit.corpus import Task
from nlekit.service import (AnnotationCoordinator, AppendLog, ServiceError,
                            StoreError, assemble_batches, check_gates, export,
                            flag_annotators, mark_for_reannotation,
                            read_batches, start_server, write_batches)


def prediction(i, correct=True):
    options = (f"cat{i}", f"dog{i}")
    return {"id": f"wg-{i}", "task": Task.WINOGRANDE,
            "fields": {"schema": f"The _ number {i} ran.",
                       "option1": options[0], "option2": options[1]},
            "label": options[0] if correct else options[1],
            "nle": f"model text {i}", "gold_label": options[0]}


def build_batches(n, seed=0):
    predictions = [prediction(i) for i in range(n)]
    golds = {p["id"]: f"reference text {i}"
             for i, p in enumerate(predictions)}
    return assemble_batches(predictions, golds, seed)


def wire_records(batch, bad_labels=0, gold_negatives=0, model_positives=0):
    """One record per item with a controlled count of gate violations."""
    records = []
    for i, item in enumerate(batch.items):
        model_slot = next(s for s, p in item.provenance.items()
                          if p == "model")
        gold_slot = next(s for s, p in item.provenance.items() if p == "gold")
        wrong = next(o for o in item.label_options if o != item.gold_label)
        records.append({
            "instance_id": item.instance_id,
            "label": wrong if i < bad_labels else item.gold_label,
            "ratings": {gold_slot: "no" if i < gold_negatives else "yes",
                        model_slot: "yes" if i < model_positives else "no"},
            "shortcomings": {gold_slot: ["none"],
                             model_slot: ["irrelevant"]},
        })
    return records


def materialize(batch, wires):
    records = []
    for wire in wires:
        item = next(i for i in batch.items
                    if i.instance_id == wire["instance_id"])
        records.append(AnnotationRecord(
            instance_id=wire["instance_id"], annotator_id="t",
            human_label=wire["label"],
            ratings={s: normalize_rating(r)
                     for s, r in wire["ratings"].items()},
            shortcomings={s: tuple(v)
                          for s, v in wire["shortcomings"].items()},
            slot_provenance=dict(item.provenance)))
    return records


@pytest.fixture
def service(tmp_path):
    batches = build_batches(12)
    store = AppendLog(str(tmp_path / "events.ndjson"))
    counter = itertools.count()
    coordinator = AnnotationCoordinator(
        batches, store, token_factory=lambda: f"ann{next(counter)}")
    server, _ = start_server(coordinator, operator_token="op-secret")
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield base, coordinator, store
    server.shutdown()
    store.close()


def register(base):
    response = requests.post(f"{base}/api/annotators", json={"name": "x"})
    assert response.status_code == 200
    return response.json()["annotator"]


def fetch_next(base, token):
    return requests.get(f"{base}/api/batches/next",
                        params={"annotator": token})


def submit(base, token, batch_id, records):
    return requests.post(f"{base}/api/batches/{batch_id}",
                         json={"annotator": token, "records": records})


# ── event store ──────────────────────────────────────────────────────────────

def test_store_appends_and_reads_back(tmp_path):
    path = str(tmp_path / "log.ndjson")
    with AppendLog(path) as store:
        store.append({"event": "register", "annotator": "t1", "name": ""})
        store.append({"event": "noop", "n": 2})
        assert [e["event"] for e in store.read_all()] == ["register", "noop"]
    with AppendLog(path) as store:
        assert len(store.read_all()) == 2


def test_store_serialization_is_canonical(tmp_path):
    a, b = str(tmp_path / "a.ndjson"), str(tmp_path / "b.ndjson")
    for path in (a, b):
        with AppendLog(path) as store:
            store.append({"z": 1, "a": {"y": 2, "x": 3}})
    assert (tmp_path / "a.ndjson").read_bytes() == \
        (tmp_path / "b.ndjson").read_bytes()


def test_store_discards_torn_trailing_write(tmp_path):
    path = tmp_path / "log.ndjson"
    with AppendLog(str(path)) as store:
        store.append({"event": "ok", "n": 1})
    with open(path, "ab") as fh:
        fh.write(b'{"event":"torn","n":')
    with AppendLog(str(path)) as store:
        events = store.read_all()
        assert [e["n"] for e in events] == [1]
        # appending after recovery must not fuse with the torn bytes
        store.append({"event": "ok", "n": 2})
        assert [e["n"] for e in store.read_all()] == [1, 2]
    lines = path.read_bytes().decode().strip().split("\n")
    assert all(json.loads(line) for line in lines)


def test_store_mid_file_corruption_raises(tmp_path):
    path = tmp_path / "log.ndjson"
    path.write_bytes(b'{"event":"ok"}\ngarbage here\n{"event":"ok2"}\n')
    with AppendLog(str(path)) as store:
        with pytest.raises(StoreError, match="log.ndjson:2"):
            store.read_all()


# ── batch assembly ───────────────────────────────────────────────────────────

def test_assemble_sizes_and_short_flag():
    batches = build_batches(87)
    assert len(batches) == 9
    assert [len(b.items) for b in batches] == [10] * 8 + [7]
    assert [b.short for b in batches] == [False] * 8 + [True]
    assert batches[0].batch_id == "batch-000"
    assert batches[8].batch_id == "batch-008"


def test_assemble_keeps_only_model_correct_instances():
    predictions = [prediction(i, correct=i % 2 == 0) for i in range(8)]
    golds = {p["id"]: "ref" for p in predictions}
    batches = assemble_batches(predictions, golds, seed=0)
    ids = [i.instance_id for b in batches for i in b.items]
    assert ids == ["wg-0", "wg-2", "wg-4", "wg-6"]


def test_assemble_slot_order_is_seeded_and_balanced():
    a = build_batches(400, seed=11)
    b = build_batches(400, seed=11)
    c = build_batches(400, seed=12)
    orders_a = [i.provenance["a"] for batch in a for i in batch.items]
    orders_b = [i.provenance["a"] for batch in b for i in batch.items]
    orders_c = [i.provenance["a"] for batch in c for i in batch.items]
    assert orders_a == orders_b
    assert orders_a != orders_c
    model_first = orders_a.count("model")
    # binomial(400, 0.5): mean 200, sd 10; allow three sigma
    assert 170 <= model_first <= 230
    for batch in a:
        for item in batch.items:
            assert sorted(item.provenance.values()) == ["gold", "model"]


def test_assemble_requires_reference_explanations():
    predictions = [prediction(i) for i in range(3)]
    golds = {"wg-0": "ref", "wg-2": "ref"}
    with pytest.raises(ServiceError, match="wg-1"):
        assemble_batches(predictions, golds, seed=0)


def test_batches_file_roundtrip(tmp_path):
    batches = build_batches(12)
    path = str(tmp_path / "batches.json")
    write_batches(batches, path)
    loaded = read_batches(path)
    assert [b.batch_id for b in loaded] == [b.batch_id for b in batches]
    assert [b.short for b in loaded] == [False, True]
    for orig, back in zip(batches, loaded):
        for a, b in zip(orig.items, back.items):
            assert a == b


# ── quality gates ────────────────────────────────────────────────────────────

def test_gates_pass_exactly_at_thresholds():
    batch = build_batches(10)[0]
    result = check_gates(batch, materialize(batch, wire_records(
        batch, bad_labels=1, gold_negatives=1, model_positives=8)))
    assert result.label_correct_pct == 90.0
    assert result.gold_positive_pct == 90.0
    assert result.model_positive_pct == 80.0
    assert result.passed
    assert result.failures == ()


def test_gates_fail_one_past_each_threshold():
    batch = build_batches(10)[0]
    labels = check_gates(batch, materialize(batch, wire_records(
        batch, bad_labels=2)))
    assert not labels.passed
    assert labels.failures == ("label_correctness",)
    gold = check_gates(batch, materialize(batch, wire_records(
        batch, gold_negatives=2)))
    assert gold.failures == ("gold_positive_minimum",)
    model = check_gates(batch, materialize(batch, wire_records(
        batch, model_positives=9)))
    assert model.failures == ("model_positive_ceiling",)
    everything = check_gates(batch, materialize(batch, wire_records(
        batch, bad_labels=10, gold_negatives=10, model_positives=10)))
    assert everything.failures == ("label_correctness",
                                   "gold_positive_minimum",
                                   "model_positive_ceiling")


def test_gates_require_full_coverage():
    batch = build_batches(10)[0]
    with pytest.raises(ServiceError, match="expected 10"):
        check_gates(batch, materialize(batch, wire_records(batch)[:9]))


# ── HTTP lifecycle ───────────────────────────────────────────────────────────

def test_http_full_acceptance_lifecycle(service):
    base, coordinator, _ = service
    a1, a2, a3 = (register(base) for _ in range(3))
    assert fetch_next(base, a1).json()["batch_id"] == "batch-000"
    assert fetch_next(base, a2).json()["batch_id"] == "batch-001"
    # both batches are held, so a third annotator waits
    assert fetch_next(base, a3).status_code == 204

    response = submit(base, a1, "batch-000",
                      wire_records(coordinator.batches["batch-000"]))
    assert response.status_code == 200
    assert response.json()["passed"] is True
    # the submitter never gets that batch back; the waiter does
    assert fetch_next(base, a1).status_code == 204
    assert fetch_next(base, a3).json()["batch_id"] == "batch-000"

    progress = requests.get(f"{base}/api/progress").json()
    assert progress["required_annotations"] == 3
    assert progress["batches"]["batch-000"]["accepted"] == 1
    assert progress["batches"]["batch-001"]["short"] is True
    assert progress["instances"]["wg-0"] == 1
    assert progress["instances"]["wg-11"] == 0
    assert progress["done"] is False


def test_http_batch_accepted_after_three_annotators(tmp_path):
    batches = build_batches(10)
    store = AppendLog(str(tmp_path / "events.ndjson"))
    coordinator = AnnotationCoordinator(batches, store)
    server, _ = start_server(coordinator)
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        for _ in range(3):
            token = register(base)
            batch_id = fetch_next(base, token).json()["batch_id"]
            records = wire_records(coordinator.batches[batch_id])
            assert submit(base, token, batch_id,
                          records).json()["passed"] is True
        progress = requests.get(f"{base}/api/progress").json()
        assert progress["batches"]["batch-000"]["status"] == "accepted"
        assert progress["done"] is True
        assert all(n == 3 for n in progress["instances"].values())
        # a fourth annotator has nothing left to do
        assert fetch_next(base, register(base)).status_code == 204
    finally:
        server.shutdown()
        store.close()


def test_http_gate_failure_requeues_for_others(service):
    base, coordinator, _ = service
    strict = register(base)
    batch_id = fetch_next(base, strict).json()["batch_id"]
    records = wire_records(coordinator.batches[batch_id], bad_labels=2)
    response = submit(base, strict, batch_id, records)
    assert response.status_code == 200
    body = response.json()
    assert body["passed"] is False
    assert body["failures"] == ["label_correctness"]
    assert body["label_correct_pct"] == 80.0

    # the submitter never sees that batch again, a newcomer does
    seen = fetch_next(base, strict)
    assert seen.status_code == 200
    assert seen.json()["batch_id"] != batch_id
    other = register(base)
    assert fetch_next(base, other).json()["batch_id"] == batch_id


def test_http_annotator_payloads_stay_blind(service):
    base, coordinator, _ = service
    token = register(base)
    bodies = [requests.post(f"{base}/api/annotators", json={}).text,
              fetch_next(base, token).text,
              requests.get(f"{base}/api/progress").text]
    batch_id = json.loads(bodies[1])["batch_id"]
    records = wire_records(coordinator.batches[batch_id])
    bodies.append(submit(base, token, batch_id, records).text)
    bodies.append(submit(base, token, batch_id, records).text)  # 409 body
    # both explanation texts are shown; which one is the reference is not
    for body in bodies:
        lowered = body.lower()
        assert "provenance" not in lowered
        assert "gold_label" not in lowered


def test_http_batch_payload_shape(service):
    base, _, _ = service
    payload = fetch_next(base, register(base)).json()
    assert payload["batch_id"] == "batch-000"
    assert len(payload["items"]) == 10
    item = payload["items"][0]
    assert set(item) == {"instance_id", "task", "task_fields",
                         "label_options", "nles"}
    assert {s["slot_id"] for s in item["nles"]} == {"a", "b"}
    assert len(item["label_options"]) == 2


def test_http_assignment_is_exclusive_and_sticky(service):
    base, _, _ = service
    a, b = register(base), register(base)
    first = fetch_next(base, a).json()["batch_id"]
    again = fetch_next(base, a).json()["batch_id"]
    assert first == again
    assert fetch_next(base, b).json()["batch_id"] != first


def test_http_error_codes(service):
    base, coordinator, _ = service
    token = register(base)
    assert fetch_next(base, "bogus").status_code == 403
    assert requests.get(f"{base}/api/batches/next").status_code == 400
    assert submit(base, token, "batch-999", []).status_code == 404
    # submitting a batch never assigned to this annotator
    records = wire_records(coordinator.batches["batch-001"])
    assert submit(base, token, "batch-001", records).status_code == 409
    batch_id = fetch_next(base, token).json()["batch_id"]
    good = wire_records(coordinator.batches[batch_id])
    assert submit(base, token, batch_id, good[:3]).status_code == 400
    assert submit(base, token, batch_id, good).status_code == 200
    assert submit(base, token, batch_id, good).status_code == 409
    assert requests.get(f"{base}/api/nothing").status_code == 404
    assert requests.post(f"{base}/api/nothing").status_code == 404


def test_http_export_is_operator_only_and_stable(service):
    base, coordinator, _ = service
    token = register(base)
    batch_id = fetch_next(base, token).json()["batch_id"]
    submit(base, token, batch_id, wire_records(
        coordinator.batches[batch_id]))

    assert requests.get(f"{base}/api/export").status_code == 403
    headers = {"X-Operator-Token": "op-secret"}
    first = requests.get(f"{base}/api/export", headers=headers)
    assert first.status_code == 200
    assert first.headers["Content-Type"] == "application/x-ndjson"
    lines = [json.loads(line) for line in first.text.strip().split("\n")]
    assert len(lines) == 10
    assert all(r["slot_provenance"] for r in lines)
    second = requests.get(f"{base}/api/export",
                          params={"token": "op-secret"})
    assert second.content == first.content


def test_gate_result_over_http_matches_direct_recomputation(service):
    base, coordinator, _ = service
    token = register(base)
    batch_id = fetch_next(base, token).json()["batch_id"]
    batch = coordinator.batches[batch_id]
    wires = wire_records(batch, bad_labels=1, gold_negatives=2,
                         model_positives=3)
    over_http = submit(base, token, batch_id, wires).json()
    direct = check_gates(batch, materialize(batch, wires))
    assert over_http == direct.to_dict()


def test_restart_replays_store_and_survives_torn_tail(tmp_path):
    store_path = str(tmp_path / "events.ndjson")
    batches_path = str(tmp_path / "batches.json")
    write_batches(build_batches(12), batches_path)

    store = AppendLog(store_path)
    coordinator = AnnotationCoordinator(read_batches(batches_path), store)
    passer = coordinator.register_annotator()
    failer = coordinator.register_annotator()
    batch = coordinator.next_batch(passer)
    coordinator.submit(batch.batch_id, passer, wire_records(batch))
    batch = coordinator.next_batch(failer)
    coordinator.submit(batch.batch_id, failer,
                       wire_records(batch, bad_labels=3))
    store.close()
    with open(store_path, "ab") as fh:
        fh.write(b'{"event":"submission","batch":"batch-000"')

    store = AppendLog(store_path)
    revived = AnnotationCoordinator(read_batches(batches_path), store)
    again = revived.batches["batch-000"]
    assert again.accepted_by == {passer}
    assert again.submitted_by == {passer, failer}
    assert again.status == "open"
    assert len(again.rejections) == 1
    # still functional after recovery
    fresh = revived.register_annotator()
    batch = revived.next_batch(fresh)
    result = revived.submit(batch.batch_id, fresh, wire_records(batch))
    assert result.passed
    assert len(store.read_all()) == 6
    store.close()


def test_export_function_matches_accepted_records(tmp_path):
    store = AppendLog(str(tmp_path / "events.ndjson"))
    coordinator = AnnotationCoordinator(build_batches(10), store)
    token = coordinator.register_annotator()
    batch = coordinator.next_batch(token)
    coordinator.submit(batch.batch_id, token, wire_records(batch))
    dump = export(store)
    assert dump == export(store)
    parsed = [AnnotationRecord.from_dict(json.loads(line))
              for line in dump.strip().split("\n")]
    assert parsed == coordinator.accepted_records()
    store.close()


# ── reviewer tooling ─────────────────────────────────────────────────────────

def seeded_store_with_volumes(tmp_path, counts):
    store = AppendLog(str(tmp_path / "flag.ndjson"))
    for annotator, count in counts.items():
        records = []
        for i in range(count):
            records.append({
                "instance_id": f"{annotator}-i{i}", "annotator_id": annotator,
                "human_label": "x", "ratings": {"a": "yes", "b": "no"},
                "shortcomings": {"a": ["none"], "b": ["irrelevant"]},
                "slot_provenance": {"a": "gold", "b": "model"}})
        store.append({"event": "submission", "batch": f"b-{annotator}",
                      "annotator": annotator, "passed": True,
                      "gates": {}, "records": records})
    return store


def test_flag_annotators_strict_volume_threshold(tmp_path):
    store = seeded_store_with_volumes(tmp_path, {"busy": 61, "modest": 60})
    flags = flag_annotators(store, volume_threshold=60)
    assert [f.annotator_id for f in flags] == ["busy"]
    assert flags[0].annotation_count == 61
    assert len(flags[0].sample) == 10
    assert all(r.annotator_id == "busy" for r in flags[0].sample)
    assert flags[0].needs_reannotation(6)
    assert not flags[0].needs_reannotation(5)
    same = flag_annotators(store, volume_threshold=60)
    assert [r.instance_id for r in same[0].sample] == \
        [r.instance_id for r in flags[0].sample]
    other = flag_annotators(store, volume_threshold=60, seed=1)
    assert [r.instance_id for r in other[0].sample] != \
        [r.instance_id for r in flags[0].sample]
    store.close()


def test_mark_for_reannotation_threshold(tmp_path):
    store = seeded_store_with_volumes(tmp_path, {"busy": 7})
    marked = mark_for_reannotation(store, "busy", wrong_count=6)
    assert marked == tuple(sorted(f"busy-i{i}" for i in range(7)))
    assert mark_for_reannotation(store, "busy", wrong_count=5) == ()
    store.close()
