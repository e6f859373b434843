import json

import pytest
from hypothesis import given, strategies as st

from cuagent.errors import MalformedAction, OutOfBounds, UnknownKey
from cuagent.png import solid_png
from cuagent.protocol import (
    KEY_VOCABULARY,
    TIMEOUT_EXIT_CODE,
    Budgets,
    Click,
    CodeAction,
    Conversation,
    ExecResult,
    Hotkey,
    Message,
    ImagePart,
    MoveMouse,
    Role,
    Screenshot,
    SubtaskAssignment,
    TaskSpec,
    Terminate,
    TypeText,
    Worker,
    extract_code_blocks,
    gui_action_from_dict,
    gui_action_to_dict,
    interaction_bound,
    parse_gui_action,
    serialize_gui_action,
    truncate_output,
)

SCREEN = (1920, 1080)


# --------------------------------------------------------------------------- budgets


def test_interaction_bound_examples():
    assert interaction_bound(Budgets(20, 25, 15)) == 375
    assert interaction_bound(Budgets(1, 1, 1)) == 1
    assert interaction_bound(Budgets(3, 5, 2)) == 10


def test_interaction_bound_matches_worst_case_enumeration():
    # worst case: every orchestrator round assigns the worker with the larger budget
    b = Budgets(3, 5, 2)
    per_round = [max(b.programmer_max_rounds, b.gui_max_steps)] * b.orchestrator_max_rounds
    assert sum(per_round) == interaction_bound(b)


@given(st.integers(1, 50), st.integers(1, 50), st.integers(1, 50), st.sampled_from(["i", "k", "j"]))
def test_interaction_bound_monotone(i, k, j, which):
    base = Budgets(i, k, j)
    bumped = Budgets(i + (which == "i"), k + (which == "k"), j + (which == "j"))
    assert interaction_bound(bumped) >= interaction_bound(base)


@pytest.mark.parametrize("bad", [0, -1, 1.5, True, "3"])
def test_budgets_reject_non_positive(bad):
    with pytest.raises(ValueError):
        Budgets(programmer_max_rounds=bad)


def test_budgets_dict_roundtrip_and_unknown_field():
    b = Budgets(2, 3, 4)
    assert Budgets.from_dict(b.to_dict()) == b
    assert Budgets.from_dict(None) == Budgets()
    with pytest.raises(ValueError):
        Budgets.from_dict({"max_rounds": 3})


# --------------------------------------------------------------------------- records


def test_taskspec_and_assignment_require_text():
    with pytest.raises(ValueError):
        TaskSpec("", "do it")
    with pytest.raises(ValueError):
        TaskSpec("t", "  ")
    with pytest.raises(ValueError):
        SubtaskAssignment(Worker.PROGRAMMER, "")


def test_screenshot_validates_dimensions():
    png = solid_png(4, 3)
    shot = Screenshot.from_png(png)
    assert shot.size == (4, 3)
    with pytest.raises(ValueError):
        Screenshot(png, 5, 3)
    with pytest.raises(ValueError):
        Screenshot(b"not a png", 1, 1)


def test_exec_result_timeout_sentinel():
    assert ExecResult(TIMEOUT_EXIT_CODE, timed_out=True).timed_out
    with pytest.raises(ValueError):
        ExecResult(0, timed_out=True)


def test_truncate_output_marks_cut():
    text, cut = truncate_output("x" * 100, 10)
    assert cut and text.startswith("x" * 10) and "truncated 90 bytes" in text
    assert truncate_output("short", 10) == ("short", False)


def test_truncate_output_respects_utf8_boundaries():
    text, cut = truncate_output("é" * 10, 5)
    assert cut
    assert text.split("\n")[0] == "éé"


# --------------------------------------------------------------------------- conversation


def test_conversation_attachments_resolve():
    conv = Conversation(Role.ORCHESTRATOR)
    shot = Screenshot.from_png(solid_png(2, 2))
    msg = conv.append(Role.SYSTEM, "hi", [shot])
    assert msg.images == [shot.digest]
    assert conv.attachments[shot.digest] == shot.png
    with pytest.raises(ValueError):
        conv.add(Message(Role.SYSTEM, (ImagePart("0" * 64),)))
    with pytest.raises(ValueError):
        Message(Role.SYSTEM, ())
    conv.clear()
    assert len(conv) == 0 and not conv.attachments


def test_conversation_last_by_role():
    conv = Conversation(Role.CODING_AGENT)
    conv.append(Role.SYSTEM, "a")
    conv.append(Role.CODING_AGENT, "b")
    conv.append(Role.CODE_INTERPRETER, "c")
    assert conv.last(Role.CODING_AGENT).text == "b"
    assert conv.last().text == "c"
    assert conv.last(Role.SUMMARIZER) is None


# --------------------------------------------------------------------------- code blocks


def test_extract_single_block():
    assert extract_code_blocks("```python\nprint(1)\n```") == [CodeAction("python", "print(1)")]


def test_extract_python_then_bash_in_order():
    text = "First:\n```python\nx = 1\nprint(x)\n```\nthen\n```bash\nls -la\necho done\n```\n"
    # reference parse written by hand
    assert extract_code_blocks(text) == [CodeAction("python", "x = 1\nprint(x)"),
                                         CodeAction("bash", "ls -la\necho done")]


def test_extract_ignores_other_and_unlabeled_blocks():
    text = "no code here"
    assert extract_code_blocks(text) == []
    text = "```\nls\n```\n```js\nconsole.log(1)\n```\n```sh\nls\n```\n```python\n\n```"
    assert extract_code_blocks(text) == []


def test_extract_language_tag_case_and_extra_info():
    assert extract_code_blocks("```Python title=x\nprint(2)\n```") == [CodeAction("python", "print(2)")]


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=300))
def test_extract_never_returns_invalid(text):
    for block in extract_code_blocks(text):
        assert block.language in ("python", "bash")
        assert block.source.strip()


def test_code_action_validation():
    with pytest.raises(ValueError):
        CodeAction("ruby", "puts 1")
    with pytest.raises(ValueError):
        CodeAction("bash", "   ")


# --------------------------------------------------------------------------- GUI actions


def test_parse_click_example():
    assert parse_gui_action('{"type":"click","x":10,"y":20,"button":"left","count":1}', SCREEN) == Click(10, 20)


def test_parse_out_of_bounds():
    with pytest.raises(OutOfBounds):
        parse_gui_action('{"type":"click","x":5000,"y":20,"button":"left","count":1}', SCREEN)
    with pytest.raises(OutOfBounds):
        parse_gui_action('{"type":"move","x":-1,"y":0}', SCREEN)
    with pytest.raises(OutOfBounds):
        parse_gui_action('{"type":"move","x":1920,"y":0}', SCREEN)


def test_parse_terminate_example():
    assert parse_gui_action('{"type":"terminate","message":"path is /tmp/a.csv"}', SCREEN) == \
        Terminate("path is /tmp/a.csv")


def test_unknown_key():
    with pytest.raises(UnknownKey):
        parse_gui_action('{"type":"hotkey","keys":["ctrl","hyper"]}', SCREEN)


def test_hotkey_names_are_case_insensitive():
    assert parse_gui_action('{"type":"hotkey","keys":["CTRL","S"]}', SCREEN) == Hotkey(("ctrl", "s"))


@pytest.mark.parametrize("text", [
    "no json",
    '{"type":"scroll","dy":3}',
    '{"type":"click","x":1}',
    '{"type":"click","x":1,"y":2,"extra":0}',
    '{"type":"click","x":1.5,"y":2}',
    '{"type":"click","x":1,"y":2,"count":3}',
    '{"type":"click","x":1,"y":2,"button":"back"}',
    '{"type":"type","text":""}',
    '{"type":"terminate","message":"  "}',
    '{"type":"hotkey","keys":[]}',
    '[1, 2]',
])
def test_malformed_actions(text):
    with pytest.raises(MalformedAction):
        parse_gui_action(text, SCREEN)


def test_first_object_wins_with_surrounding_prose():
    text = 'I will click it.\n{"type":"move","x":1,"y":2}\nthen {"type":"move","x":3,"y":4}'
    assert parse_gui_action(text, SCREEN) == MoveMouse(1, 2)


coords = st.tuples(st.integers(0, SCREEN[0] - 1), st.integers(0, SCREEN[1] - 1))
actions = st.one_of(
    coords.map(lambda c: MoveMouse(*c)),
    st.builds(lambda c, b, n: Click(c[0], c[1], b, n), coords, st.sampled_from(["left", "right", "middle"]),
              st.sampled_from([1, 2])),
    st.lists(st.sampled_from(sorted(KEY_VOCABULARY)), min_size=1, max_size=4).map(lambda ks: Hotkey(tuple(ks))),
    st.text(min_size=1).map(TypeText),
    st.text(min_size=1).filter(lambda s: s.strip()).map(Terminate),
)


@given(actions)
def test_gui_action_roundtrip(action):
    text = serialize_gui_action(action)
    parsed = parse_gui_action(text, SCREEN)
    assert parsed == action
    assert serialize_gui_action(parsed) == text
    assert gui_action_from_dict(json.loads(text)) == action
    assert gui_action_to_dict(action)["type"] in ("move", "click", "hotkey", "type", "terminate")
