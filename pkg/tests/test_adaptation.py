import json

from culturaleval.corpus import Dialog, Utterance, validate_adaptation_structure
from culturaleval.judge.backends import MockBackend
from culturaleval.judge.calls import generate_adaptation, parse_adapted_utterances
from culturaleval.judge.mock import echo_adapter, replay_adapter


def load_t12(fixtures):
    t12 = json.loads((fixtures / "table12.json").read_text())
    original = Dialog("t12", tuple(Utterance.from_line(x) for x in t12["original"]))
    return t12, original


def test_table12_replay(fixtures):
    t12, original = load_t12(fixtures)
    for model in ("Llama-2 70B", "Llama-3 8B", "Llama-3 70B"):
        backend = replay_adapter(model, {original.text: "\n".join(t12[model])})
        rec = generate_adaptation(backend, original)
        assert len(rec.utterances) == 9
        assert [u.serialize() for u in rec.utterances] == t12[model]
        assert rec.culture_id == "india" and rec.model_id == model
    rec = generate_adaptation(replay_adapter("x", {original.text: "\n".join(t12["Llama-2 70B"])}), original)
    assert rec.utterances[1].text == "Hey Frannie, welcome back! How was Goa?"


def test_refusal_gives_empty_adaptation(fixtures):
    _, original = load_t12(fixtures)
    rec = generate_adaptation(MockBackend(default="I cannot adapt this."), original)
    assert rec.utterances == ()
    assert rec.raw_completion == "I cannot adapt this."
    assert validate_adaptation_structure(original, rec).empty_adaptation


def test_echo_is_identity(fixtures):
    _, original = load_t12(fixtures)
    rec = generate_adaptation(echo_adapter(), original)
    assert rec.utterances == original.utterances
    assert validate_adaptation_structure(original, rec).clean


def test_completion_headers_and_markup_dropped():
    raw = "Here is the adapted version:\n\n**Ross:** Let's get samosas.\nRachel: Sure!\n\nHope this helps."
    assert parse_adapted_utterances(raw, {"Ross", "Rachel"}) == [
        Utterance("Ross", "Let's get samosas."),
        Utterance("Rachel", "Sure!"),
    ]


def test_transcript_note_may_be_empty():
    assert parse_adapted_utterances("TRANSCRIPT NOTE: \nRoss: hi") == [
        Utterance("TRANSCRIPT NOTE", ""),
        Utterance("Ross", "hi"),
    ]


def test_raw_completion_kept_even_on_count_mismatch(fixtures):
    t12, original = load_t12(fixtures)
    short = "\n".join(t12["Llama-3 70B"][:5])
    rec = generate_adaptation(MockBackend(default=short), original)
    assert len(rec.utterances) == 5 and rec.raw_completion == short
    assert not validate_adaptation_structure(original, rec).utterance_count_match
