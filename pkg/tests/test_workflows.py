import json
from datetime import datetime, timedelta, timezone

import pytest

from conftest import FIXTURES
from reviewpulse.records import WorkflowFile
from reviewpulse.workflows import (CATEGORIES, TriggerMode, attribute_repository, categorize_params,
                                   config_evolution, derive_trigger_mode, llm_family, load_schema,
                                   load_watch_list, scan_workflows)

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)
WATCH = load_watch_list()
EXPECTED = json.loads((FIXTURES / "workflow_expectations.json").read_text())


def wf(text, name="review.yml", at=T0, sha="0" * 40):
    return WorkflowFile(f".github/workflows/{name}", text, sha, at)


STEP = """on: pull_request
jobs:
  review:
    runs-on: ubuntu-latest
    steps:
      - uses: anc95/ChatGPT-CodeReview@{ref}
        env:
          GITHUB_TOKEN: x
          OPENAI_API_KEY: y
          MODEL: {model}
          {extra}
"""


def step(ref="v1", model="gpt-3.5-turbo", extra="LANGUAGE: English"):
    return STEP.format(ref=ref, model=model, extra=extra)


def test_watch_list_has_sixteen_actions_with_schemas():
    assert [s.id for s in WATCH] == list(range(1, 17))
    for spec in WATCH:
        schema = load_schema(spec.action)
        assert schema.categories, spec.action
        assert set(schema.categories.values()) <= set(CATEGORIES)


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_corpus_file(name):
    f = wf((FIXTURES / "workflows" / name).read_text(encoding="utf-8"), name)
    refs = scan_workflows([f], WATCH)
    action, ambiguous = attribute_repository(refs)
    exp = EXPECTED[name]
    assert (action, ambiguous) == (exp["attribution"], exp["ambiguous"])
    assert len(refs) == len(exp["references"])
    for r, e in zip(refs, exp["references"]):
        snap = categorize_params(r.params, load_schema(r.action))
        assert (r.action, r.version_ref, r.job_id, r.step_index, r.doc_index) == \
            (e["action"], e["version_ref"], e["job_id"], e["step_index"], e["doc_index"])
        assert derive_trigger_mode(f, r).value == e["trigger"]
        assert llm_family(snap) == e["llm"]
        assert sorted(snap.unknown) == e["unknown"]


def test_required_params_are_not_configuration():
    ref = scan_workflows([wf(step())], WATCH)[0]
    snap = categorize_params(ref.params, load_schema(ref.action))
    assert "GITHUB_TOKEN" not in snap.parameters and "OPENAI_API_KEY" not in snap.parameters
    assert llm_family(snap) == "GPT-3.5"


def test_unknown_parameter_is_reported_not_categorized():
    ref = scan_workflows([wf(step(extra="SHINY_NEW_KNOB: 1"))], WATCH)[0]
    snap = categorize_params(ref.params, load_schema(ref.action))
    assert snap.unknown == {"SHINY_NEW_KNOB"}
    assert "SHINY_NEW_KNOB" not in snap.category_of


def test_unparseable_workflow_is_skipped():
    assert scan_workflows([wf("jobs: [unclosed")], WATCH) == []


def test_workflow_level_if_is_manual():
    text = step().replace("jobs:", "if: github.actor == 'me'\njobs:", 1)
    f = wf(text)
    assert derive_trigger_mode(f, scan_workflows([f], WATCH)[0]) is TriggerMode.MANUAL


def test_attribution_rules():
    one = scan_workflows([wf(step())], WATCH)
    assert attribute_repository(one) == ("anc95/ChatGPT-CodeReview", False)
    two_files = one + scan_workflows([wf(step(), "other.yml")], WATCH)
    assert attribute_repository(two_files) == (None, True)
    assert attribute_repository([]) == (None, False)


def test_config_evolution_tracks_changes():
    history = [
        wf(step(), at=T0, sha="1" * 40),
        wf(step(ref="v2", model="gpt-4"), at=T0 + timedelta(days=3), sha="2" * 40),
        wf(step(ref="v2", model="gpt-4", extra="LANGUAGE: French"), at=T0 + timedelta(days=10), sha="3" * 40),
    ]
    evo = config_evolution(history, load_schema("anc95/ChatGPT-CodeReview"), "anc95/ChatGPT-CodeReview")
    assert evo.commit_count == 3 and evo.span_days == 10.0
    assert evo.version_ref_changed and not evo.trigger_changed
    assert sum(evo.changed_categories.values()) == 2
    with pytest.raises(ValueError):
        config_evolution([], {})


def test_trigger_change_is_detected():
    a = wf(step(), sha="1" * 40)
    b = wf(step().replace("on: pull_request", "on: issue_comment"), at=T0 + timedelta(days=1), sha="2" * 40)
    evo = config_evolution([a, b], load_schema("anc95/ChatGPT-CodeReview"), "anc95/ChatGPT-CodeReview")
    assert evo.trigger_changed


def test_local_and_docker_uses_are_ignored():
    text = step().replace("anc95/ChatGPT-CodeReview@v1", "./anc95/ChatGPT-CodeReview")
    assert scan_workflows([wf(text)], WATCH) == []
