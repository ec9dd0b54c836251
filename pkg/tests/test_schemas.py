"""Every message in the golden corpus must validate against the shipped
JSON-schema documents, and engine-produced payloads must conform too."""

import json
from pathlib import Path

import pytest

jsonschema = pytest.importorskip("jsonschema")

DOCS = Path(__file__).parent.parent / "docs" / "schemas"
CORPUS = Path(__file__).parent / "data" / "conformance_corpus.jsonl"

KNOWN_OPS = ("init", "detect", "generate", "embed", "train_epoch", "reinit", "shutdown")


@pytest.fixture(scope="module")
def validators():
    payloads = json.loads((DOCS / "payloads.schema.json").read_text())
    registry = None
    try:
        from referencing import Registry, Resource

        registry = Registry().with_resource(
            payloads["$id"], Resource.from_contents(payloads)
        )
    except ImportError:
        pass

    def for_def(name):
        schema = {"$ref": f"{payloads['$id']}#/$defs/{name}"}
        if registry is not None:
            return jsonschema.Draft202012Validator(schema, registry=registry)
        return jsonschema.Draft202012Validator(
            {"$defs": payloads["$defs"], **payloads["$defs"][name]}
        )

    return {
        "request": jsonschema.Draft202012Validator(
            json.loads((DOCS / "request.schema.json").read_text())
        ),
        "response": jsonschema.Draft202012Validator(
            json.loads((DOCS / "response.schema.json").read_text())
        ),
        "defs": for_def,
    }


def corpus_entries():
    for line in CORPUS.read_text().splitlines():
        entry = json.loads(line)
        yield json.loads(entry["request"]), json.loads(entry["response"])


def test_envelopes_validate(validators):
    for request, response in corpus_entries():
        validators["request"].validate(request)
        validators["response"].validate(response)


def test_op_payloads_validate(validators):
    roles = {}
    for request, response in corpus_entries():
        op = request["op"]
        if op not in KNOWN_OPS:
            assert response["ok"] is False
            continue
        payload = request["payload"]
        if op == "init":
            validators["defs"]("init_request").validate(payload)
            role = payload["role"]
            if response["ok"]:
                validators["defs"]("init_response").validate(response["payload"])
                roles["current"] = role
            continue
        role = roles.get("current")
        if op == "train_epoch":
            name = f"train_epoch_{role}_request"
            if "labels" in payload or "samples" in payload:
                validators["defs"](name).validate(payload)
        elif op in ("detect", "embed", "generate", "reinit", "shutdown"):
            validators["defs"](f"{op}_request").validate(payload)
        if response["ok"]:
            resp_payload = response["payload"]
            resp_name = "train_epoch_response" if op == "train_epoch" else f"{op}_response"
            validators["defs"](resp_name).validate(resp_payload)


def test_dip_wire_format_validates(validators, small_synth):
    from coedg.adapters.protocol import dip_to_wire
    from coedg.dip import build_dip_input, ground_truth_detections

    validator = validators["defs"]("dip_input")
    for sample in small_synth.samples[:20]:
        if sample.labeled:
            dip = build_dip_input(
                sample, ground_truth_detections(sample), "ground-truth", 5
            )
            validator.validate(dip_to_wire(dip))


def test_run_prediction_dumps_validate(validators, small_synth, tmp_path):
    from coedg.coevolution import CoEvoConfig, CoEvoRunner

    runner = CoEvoRunner(
        CoEvoConfig(iterations=1, epochs_per_iteration=2, batch_size=6, seed=1),
        small_synth,
        run_dir=tmp_path,
    )
    runner.run()
    validator = validators["defs"]("detect_response")
    for line in (tmp_path / "predictions" / "iter0_detections.jsonl").read_text().splitlines():
        record = json.loads(line)
        validator.validate({"detections": record["detections"]})
