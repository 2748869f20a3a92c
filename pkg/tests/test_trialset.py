import pytest
from hypothesis import given, strategies as st

from svkit.trialset import (Condition, EnrollmentMap, Label, ParseError, Policy, SegmentId,
                            SourceType, TrialRecord, format_enrollment_map, format_trial_key,
                            format_trial_list, parse_enrollment_map, parse_trial_key,
                            parse_trial_list, partition_trials, tag_condition)

SPH_ENROLL = parse_enrollment_map("m1\tE.sph\n")


def seg(name):
    return SegmentId.from_name(name)


def test_trial_sph_sph():
    trials = parse_trial_list("m1\tA.sph\n", SPH_ENROLL)
    assert trials == [TrialRecord("m1", SegmentId("A.sph", SourceType.SPH), Condition.SPH_SPH)]


def test_trial_sph_flac():
    (t,) = parse_trial_list("m1\tB.flac\n", SPH_ENROLL)
    assert t.condition is Condition.SPH_FLAC


def test_trial_list_empty():
    assert parse_trial_list("", SPH_ENROLL) == []


def test_trial_list_comments_blank_and_override():
    text = "# header\n\nm1\tA.sph\tflac-flac\nm9\tZ.sph\n"
    a, b = parse_trial_list(text, SPH_ENROLL)
    assert a.condition is Condition.FLAC_FLAC
    assert b.condition is Condition.OTHER  # model not enrolled


def test_trial_list_malformed_line_number():
    with pytest.raises(ParseError) as err:
        parse_trial_list("m1\tA.sph\nbroken-line\n")
    assert err.value.lineno == 2


def test_trial_list_duplicates():
    text = "m1\tA.sph\nm1\tA.sph\n"
    with pytest.raises(ParseError):
        parse_trial_list(text, SPH_ENROLL)
    assert len(parse_trial_list(text, SPH_ENROLL, duplicates="keep-first")) == 1


def test_extension_case_insensitive():
    assert seg("A.SPH").source_type is SourceType.SPH
    assert seg("x.Flac").source_type is SourceType.FLAC
    assert seg("noext").source_type is SourceType.UNKNOWN
    assert seg("clip.mp4").source_type is SourceType.VIDEO


@pytest.mark.parametrize("text,expected", [
    ("m1\ts1\ttarget\n", Label.TARGET),
    ("m1\ts1\tTARGET\n", Label.TARGET),
    ("m1\ts1\tNonTarget\n", Label.NONTARGET),
])
def test_key_parse(text, expected):
    assert parse_trial_key(text) == {("m1", "s1"): expected}


def test_key_unknown_label():
    with pytest.raises(ParseError):
        parse_trial_key("m1\ts1\tmaybe\n")


def test_enrollment_map():
    emap = parse_enrollment_map("m1\ts1\nm1\ts2\n")
    assert [s.id for s in emap["m1"]] == ["s1", "s2"]
    assert [s.id for s in parse_enrollment_map("m1\ts1\n")["m1"]] == ["s1"]
    assert len(parse_enrollment_map("")) == 0


def test_enrollment_map_duplicate():
    with pytest.raises(ParseError):
        parse_enrollment_map("m1\ts1\nm1\ts1\n")


def test_tag_condition_examples():
    assert tag_condition(seg("E.flac"), seg("T.sph"), Policy.ORDERED) is Condition.FLAC_SPH
    assert tag_condition(seg("E.flac"), seg("T.sph"), Policy.UNORDERED) is Condition.SPH_FLAC
    for policy in Policy:
        assert tag_condition(seg("E.sph"), seg("T.sph"), policy) is Condition.SPH_SPH
    assert tag_condition(seg("E"), seg("T.sph")) is Condition.OTHER


def test_ordered_policy_covers_four_tags():
    names = ["a.sph", "a.flac"]
    tags = {tag_condition(seg(e), seg(t), Policy.ORDERED) for e in names for t in names}
    assert tags == {Condition.SPH_SPH, Condition.SPH_FLAC, Condition.FLAC_SPH, Condition.FLAC_FLAC}
    tags = {tag_condition(seg(e), seg(t), Policy.UNORDERED) for e in names for t in names}
    assert len(tags) == 3


def _t(cond, i=0):
    return TrialRecord(f"m{i}", SegmentId(f"s{i}"), cond)


def test_partition_examples():
    parts = partition_trials([_t(Condition.SPH_SPH, 0), _t(Condition.SPH_SPH, 1), _t(Condition.FLAC_FLAC, 2)])
    assert sorted(len(v) for v in parts.values()) == [1, 2]
    assert partition_trials([]) == {}
    four = [_t(c, i) for i, c in enumerate(
        [Condition.SPH_SPH, Condition.SPH_FLAC, Condition.FLAC_SPH, Condition.FLAC_FLAC])]
    parts = partition_trials(four)
    assert len(parts) == 4 and all(len(v) == 1 for v in parts.values())


exts = st.sampled_from(["a.sph", "b.flac", "c.SPH", "d", "e.mp4"])


@given(st.lists(st.tuples(exts, exts), max_size=40), st.sampled_from(list(Policy)))
def test_partition_is_exact_and_order_preserving(pairs, policy):
    trials = [TrialRecord(f"m{i}", seg(t), tag_condition(seg(e), seg(t), policy))
              for i, (e, t) in enumerate(pairs)]
    parts = partition_trials(trials)
    assert sum(len(v) for v in parts.values()) == len(trials)
    for cond, members in parts.items():
        assert members == [t for t in trials if t.condition is cond]


@given(exts, exts)
def test_unordered_symmetric(a, b):
    assert tag_condition(seg(a), seg(b), Policy.UNORDERED) is tag_condition(seg(b), seg(a), Policy.UNORDERED)


tokens = st.text(alphabet="abcXYZ019_-.", min_size=1, max_size=8).filter(lambda s: not s.startswith("#"))


@given(st.lists(st.tuples(tokens, tokens), max_size=20, unique=True))
def test_round_trips(pairs):
    emap = parse_enrollment_map("".join(f"{m}\t{s}\n" for m, s in pairs))
    assert parse_enrollment_map(format_enrollment_map(emap)) == emap

    key = {p: (Label.TARGET if i % 2 else Label.NONTARGET) for i, p in enumerate(pairs)}
    assert parse_trial_key(format_trial_key(key)) == key

    trials = parse_trial_list("".join(f"{m}\t{s}\n" for m, s in pairs), emap)
    assert parse_trial_list(format_trial_list(trials), emap) == trials
