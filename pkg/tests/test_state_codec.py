import random
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialogweave.corpus import BeliefState, Mode
from dialogweave.pivot.state import (
    State,
    StateParseError,
    belief_of,
    encode_belief,
    encode_state,
    parse_belief,
    parse_state,
    state_from_belief,
)


class TestSurfaceSyntax:
    def test_odd_with_query(self):
        state = State(Mode.ODD, "norwich cathedral city")
        assert encode_state(state) == "odd: norwich cathedral city"
        assert parse_state("odd: norwich cathedral city") == state

    def test_odd_empty_query(self):
        state = State(Mode.ODD, "")
        assert encode_state(state) == "odd:"
        assert parse_state("odd:") == state

    def test_tod_belief_surface(self):
        belief = BeliefState()
        belief.set("train", "destination", "norwich")
        belief.set("train", "day", "thursday")
        state = state_from_belief(belief)
        assert encode_state(state) == "tod: train destination=norwich day=thursday"
        assert parse_state(encode_state(state)) == state

    def test_unknown_mode_token(self):
        with pytest.raises(StateParseError):
            parse_state("frobnicate: x")

    def test_no_separator(self):
        with pytest.raises(StateParseError):
            parse_state("???")

    def test_tod_query_must_parse_as_belief(self):
        with pytest.raises(StateParseError):
            parse_state("tod: ???===")

    def test_tod_query_is_canonicalized(self):
        parsed = parse_state("tod: train day=thursday destination=norwich")
        assert parsed.query == "train destination=norwich day=thursday"

    def test_spaced_assignments_tolerated(self):
        parsed = parse_state("tod : train destination = norwich day = thursday")
        assert parsed.query == "train destination=norwich day=thursday"


class TestBeliefCodec:
    def test_multiword_values(self):
        belief = BeliefState()
        belief.set("restaurant", "name", "the copper kettle")
        belief.set("restaurant", "area", "centre")
        text = encode_belief(belief)
        assert text == "restaurant name=the copper kettle area=centre"
        assert parse_belief(text) == belief

    def test_domain_switch_mid_value_requires_known_domain(self):
        belief = BeliefState()
        belief.set("hotel", "name", "lime house")
        belief.set("train", "day", "monday")
        text = encode_belief(belief)
        assert parse_belief(text) == belief

    def test_empty_value_rejected(self):
        with pytest.raises(StateParseError):
            parse_belief("train day=")

    def test_assignment_before_domain_rejected(self):
        with pytest.raises(StateParseError):
            parse_belief("day=monday")

    def test_empty_text_is_empty_belief(self):
        assert parse_belief("") == BeliefState()

    def test_belief_of_rejects_chitchat_states(self):
        with pytest.raises(StateParseError):
            belief_of(State(Mode.ODD, "query"))

    def test_belief_of_empty_tod(self):
        assert belief_of(State(Mode.TOD, "")) == BeliefState()


from oracles import random_valid_state


class TestRoundTripProperties:
    def test_randomized_round_trip(self):
        rng = random.Random(99)
        for _ in range(500):
            state = random_valid_state(rng)
            assert parse_state(encode_state(state)) == state

    def test_random_strings_never_crash(self):
        rng = random.Random(7)
        alphabet = string.printable
        for _ in range(500):
            text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
            try:
                parse_state(text)
            except StateParseError:
                pass

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=60))
    def test_parse_is_total_hypothesis(self, text):
        try:
            parse_state(text)
        except StateParseError:
            pass
