"""Deterministic fixture world: a miniature multi-domain booking universe
with an ontology, database, task-oriented dialog generator, scripted
simulator casts, and a mock search provider.

Everything here is a pure function of its seed, so suites and demos that
build on it are exactly reproducible.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from .backends import ScriptedBackend
from .corpus import (
    BeliefState,
    Dialog,
    DialogSet,
    DomainGoal,
    GoalCard,
    Mode,
    Ontology,
    Source,
    Speaker,
    Turn,
)
from .intent import IntentDetector, KeywordIntentClassifier
from .knowledge import Database, DBRecord, MockSearchProvider
from .synthesis import SynthesisBackends

AREAS = ("centre", "north", "south", "east", "west")
FOODS = ("italian", "chinese", "indian", "british", "mexican", "lebanese")
PRICERANGES = ("cheap", "moderate", "expensive")
PLACES = ("cambridge", "london", "norwich", "ely", "peterborough", "stansted")
DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
HOTEL_TYPES = ("hotel", "guesthouse")
ATTRACTION_TYPES = ("museum", "college", "park", "cinema")
DEPARTMENTS = ("cardiology", "neurology", "paediatrics", "oncology", "surgery")

RESTAURANT_NAMES = (
    "golden curry", "river bar", "copper kettle", "blue spice", "little seoul",
    "ask house", "graffiti grill", "royal standard", "garden gate", "city stop",
    "anatolia corner", "midsummer tavern",
)
HOTEL_NAMES = (
    "acorn guest house", "alexander inn", "gonville hotel", "lime house",
    "archway lodge", "city roomz", "huntingdon manor", "leverton house",
)
ATTRACTION_NAMES = (
    "byard art", "castle mound", "club salsa", "jesus green", "scott museum",
    "trinity hall", "old cinema", "market square",
)


def fixture_ontology() -> Ontology:
    values = {
        ("restaurant", "name"): list(RESTAURANT_NAMES),
        ("restaurant", "area"): list(AREAS),
        ("restaurant", "food"): list(FOODS),
        ("restaurant", "pricerange"): list(PRICERANGES),
        ("hotel", "name"): list(HOTEL_NAMES),
        ("hotel", "area"): list(AREAS),
        ("hotel", "pricerange"): list(PRICERANGES),
        ("hotel", "type"): list(HOTEL_TYPES),
        ("hotel", "stars"): [str(s) for s in range(1, 6)],
        ("train", "departure"): list(PLACES),
        ("train", "destination"): list(PLACES),
        ("train", "day"): list(DAYS),
        ("attraction", "name"): list(ATTRACTION_NAMES),
        ("attraction", "area"): list(AREAS),
        ("attraction", "type"): list(ATTRACTION_TYPES),
        ("hospital", "department"): list(DEPARTMENTS),
        ("taxi", "departure"): list(PLACES),
        ("taxi", "destination"): list(PLACES),
    }
    return Ontology(values)


def fixture_database() -> Database:
    records: list[DBRecord] = []
    for i, name in enumerate(RESTAURANT_NAMES):
        records.append(
            DBRecord(
                "restaurant",
                {
                    "name": name,
                    "area": AREAS[i % 5],
                    "food": FOODS[i % 6],
                    "pricerange": PRICERANGES[i % 3],
                    "phone": f"01223 4{i:05d}",
                    "address": f"{i + 1} mill road",
                    "postcode": f"cb{i % 4 + 1} {i % 9}aa",
                },
            )
        )
    for i, name in enumerate(HOTEL_NAMES):
        records.append(
            DBRecord(
                "hotel",
                {
                    "name": name,
                    "area": AREAS[(i + 2) % 5],
                    "pricerange": PRICERANGES[i % 3],
                    "type": HOTEL_TYPES[i % 2],
                    "stars": str(i % 5 + 1),
                    "phone": f"01223 5{i:05d}",
                    "address": f"{i + 3} station road",
                },
            )
        )
    for i in range(18):
        departure = PLACES[i % 6]
        destination = PLACES[(i + 1 + i % 5) % 6]
        records.append(
            DBRecord(
                "train",
                {
                    "trainid": f"tr{1000 + i * 137}",
                    "departure": departure,
                    "destination": destination,
                    "day": DAYS[i % 7],
                    "leaveat": f"{5 + i % 18:02d}:{(i * 7) % 60:02d}",
                    "arriveby": f"{6 + i % 18:02d}:{(i * 7) % 60:02d}",
                    "price": f"{10 + i % 30}.{i * 13 % 100:02d} pounds",
                    "duration": f"{50 + i % 40} minutes",
                },
            )
        )
    for i, name in enumerate(ATTRACTION_NAMES):
        records.append(
            DBRecord(
                "attraction",
                {
                    "name": name,
                    "area": AREAS[(i + 1) % 5],
                    "type": ATTRACTION_TYPES[i % 4],
                    "entrancefee": "free" if i % 2 == 0 else "5 pounds",
                    "phone": f"01223 6{i:05d}",
                    "address": f"{i + 2} king street",
                },
            )
        )
    for i, department in enumerate(DEPARTMENTS):
        records.append(
            DBRecord(
                "hospital",
                {"department": department, "phone": f"01223 7{i:05d}"},
            )
        )
    return Database(records)


_REQUESTABLE = {
    "restaurant": ("phone", "address", "postcode"),
    "hotel": ("phone", "address"),
    "train": ("price", "duration"),
    "attraction": ("phone", "address"),
}


def _entity_exchanges(domain: str, record: DBRecord, request_slot: str, belief: BeliefState):
    """Two user/system exchanges: constrain and offer, then request and
    answer. Returns (turns, constraints)."""
    a = record.attributes
    if domain == "restaurant":
        constraints = {"food": a["food"], "area": a["area"]}
        ask = f"i am looking for a {a['food']} restaurant in the {a['area']} ."
        offer = f"{a['name']} is a nice {a['food']} place in the {a['area']} ."
        offer_delex = "[value_name] is a nice [value_food] place in the [value_area] ."
        request_text = f"what is the {request_slot} of the place in the {a['area']} ?"
    elif domain == "hotel":
        constraints = {"pricerange": a["pricerange"], "type": a["type"]}
        ask = f"i need a {a['pricerange']} {a['type']} to stay at ."
        offer = f"{a['name']} is a {a['pricerange']} {a['type']} with {a['stars']} stars ."
        offer_delex = "[value_name] is a [value_pricerange] [value_type] with [value_stars] stars ."
        request_text = f"what is the {request_slot} of that {a['type']} ?"
    elif domain == "train":
        constraints = {"destination": a["destination"], "day": a["day"]}
        ask = f"i need a train to {a['destination']} on {a['day']} ."
        offer = f"{a['trainid']} leaves at {a['leaveat']} and arrives by {a['arriveby']} ."
        offer_delex = "[train_id] leaves at [value_time] and arrives by [value_time] ."
        request_text = f"what is the {request_slot} for the {a['day']} train ?"
    else:
        constraints = {"type": a["type"], "area": a["area"]}
        ask = f"i would like to visit a {a['type']} in the {a['area']} ."
        offer = f"{a['name']} is a popular {a['type']} in the {a['area']} ."
        offer_delex = "[value_name] is a popular [value_type] in the [value_area] ."
        request_text = f"what is the {request_slot} of the {a['type']} ?"

    for slot, value in constraints.items():
        belief.set(domain, slot, value)
    answer = f"the {request_slot} is {a[request_slot]} ."
    answer_delex = f"the {request_slot} is [value_{request_slot}] ."
    turns = [
        Turn(Speaker.USER, ask, Mode.TOD, domain=domain),
        Turn(
            Speaker.SYSTEM, offer, Mode.TOD, delex_text=offer_delex,
            domain=domain, belief=belief.copy(),
        ),
        Turn(Speaker.USER, request_text, Mode.TOD, domain=domain),
        Turn(
            Speaker.SYSTEM, answer, Mode.TOD, delex_text=answer_delex,
            domain=domain, belief=belief.copy(),
        ),
    ]
    return turns, constraints


_ENTITY_DOMAIN_CYCLE = ("restaurant", "train", "hotel", "attraction")


def build_fixture_corpus(n_dialogs: int = 50, seed: int = 0) -> DialogSet:
    """Task-oriented dialogs over the fixture world. Every third dialog
    spans two domains; every tenth is a no-entity taxi dialog (half of
    those with no requested slots at all)."""
    db = fixture_database()
    dialogs = []
    for i in range(n_dialogs):
        rng = random.Random(seed * 100003 + i)
        dialog_id = f"fix{i:04d}"
        if i % 10 == 9:
            p1, p2 = rng.sample(PLACES, 2)
            belief = BeliefState()
            belief.set("taxi", "departure", p1)
            belief.set("taxi", "destination", p2)
            turns = [
                Turn(Speaker.USER, f"i need a taxi from {p1} to {p2} .", Mode.TOD, domain="taxi"),
                Turn(
                    Speaker.SYSTEM,
                    f"i have booked your taxi from {p1} to {p2} .",
                    Mode.TOD,
                    delex_text="i have booked your taxi from [value_place] to [value_place] .",
                    domain="taxi",
                    belief=belief.copy(),
                ),
            ]
            requests: list[str] = []
            if i % 20 == 9:
                requests = ["phone"]
                contact = f"07700 9{i:05d}"
                turns += [
                    Turn(Speaker.USER, "what is the phone number ?", Mode.TOD, domain="taxi"),
                    Turn(
                        Speaker.SYSTEM,
                        f"the contact number is {contact} .",
                        Mode.TOD,
                        delex_text="the contact number is [value_phone] .",
                        domain="taxi",
                        belief=belief.copy(),
                    ),
                ]
            else:
                turns += [
                    Turn(Speaker.USER, "thank you , that is all .", Mode.TOD, domain="taxi"),
                    Turn(
                        Speaker.SYSTEM,
                        "you are welcome , goodbye .",
                        Mode.TOD,
                        delex_text="you are welcome , goodbye .",
                        domain="taxi",
                        belief=belief.copy(),
                    ),
                ]
            card = GoalCard(
                {
                    "taxi": DomainGoal(
                        constraints={"departure": p1, "destination": p2},
                        requests=requests,
                        requires_entity=False,
                    )
                }
            )
            dialogs.append(Dialog(dialog_id, turns, goal_card=card, source=Source.ORIGINAL_TOD))
            continue

        belief = BeliefState()
        domain = _ENTITY_DOMAIN_CYCLE[i % 4]
        pool = db.by_domain(domain)
        record = pool[rng.randrange(len(pool))]
        request_slot = _REQUESTABLE[domain][rng.randrange(len(_REQUESTABLE[domain]))]
        turns, constraints = _entity_exchanges(domain, record, request_slot, belief)
        card_domains = {
            domain: DomainGoal(constraints=dict(constraints), requests=[request_slot])
        }
        if i % 3 == 1:
            domain2 = _ENTITY_DOMAIN_CYCLE[(i + 1) % 4]
            pool2 = db.by_domain(domain2)
            record2 = pool2[rng.randrange(len(pool2))]
            request2 = _REQUESTABLE[domain2][rng.randrange(len(_REQUESTABLE[domain2]))]
            turns2, constraints2 = _entity_exchanges(domain2, record2, request2, belief)
            turns += turns2
            card_domains[domain2] = DomainGoal(constraints=dict(constraints2), requests=[request2])
        else:
            turns += [
                Turn(Speaker.USER, "thank you , goodbye .", Mode.TOD, domain=domain),
                Turn(
                    Speaker.SYSTEM,
                    "you are welcome , have a great day .",
                    Mode.TOD,
                    delex_text="you are welcome , have a great day .",
                    domain=domain,
                    belief=belief.copy(),
                ),
            ]
        dialogs.append(
            Dialog(dialog_id, turns, goal_card=GoalCard(card_domains), source=Source.ORIGINAL_TOD)
        )
    return DialogSet(dialogs)


def fixture_search_provider() -> MockSearchProvider:
    return MockSearchProvider(
        {
            "norwich": ["norwich is a cathedral city in norfolk , england ."],
            "cambridge": ["cambridge is a university city on the river cam ."],
            "london": ["london is the capital of england ."],
            "museum": ["museums preserve and exhibit artifacts of scientific or cultural interest ."],
            "italian": ["italian cuisine is known for pasta , olive oil , and regional variety ."],
        }
    )


def fixture_detector() -> IntentDetector:
    classifier = KeywordIntentClassifier(
        odd_markers=("love", "fun", "interesting", "wonderful", "adventures", "honestly", "lovely"),
        tod_markers=("book", "ticket", "need", "train", "restaurant", "hotel", "reserve"),
    )
    return IntentDetector(classifier=classifier)


def fixture_synthesis_backends(
    goal_script: str = "always", accept_rate: str = "always", with_search: bool = True
) -> SynthesisBackends:
    """Scripted simulator cast. ``goal_script`` controls how quickly the
    simulated user reaches the goal ("always": first reply, "mixed":
    alternating). ``accept_rate`` controls how often mid-dialog openers
    pass the detector ("always" or "half")."""
    if accept_rate == "always":
        chat_script = ["you know , i love {persona} little adventures like this ."]
    else:
        chat_script = [
            "you know , i love {persona} little adventures like this .",
            "i need to book a ticket right away .",
        ]
    if goal_script == "always":
        user_script = ["honestly {goal} has been on my mind all day ."]
    else:
        user_script = [
            "that is so interesting , tell me more .",
            "honestly {goal} has been on my mind all day .",
        ]
    return SynthesisBackends(
        chat=ScriptedBackend(chat_script, cycle=True, name="chat-sim"),
        user=ScriptedBackend(user_script, cycle=True, name="user-sim"),
        system=ScriptedBackend(
            ["oh that is fun , i read about it recently ."], cycle=True, name="system-sim"
        ),
        transition=ScriptedBackend(
            ["glad to hear that ! now back to your request ."], cycle=True, name="transition-sim"
        ),
        search=fixture_search_provider() if with_search else None,
    )


# -- on-disk fixture files ---------------------------------------------------


def write_ontology_file(path: str | Path) -> Path:
    path = Path(path)
    ontology = fixture_ontology()
    payload = {f"{d}-{s}": values for (d, s), values in ontology.values.items()}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return path


def write_database_file(path: str | Path) -> Path:
    path = Path(path)
    db = fixture_database()
    payload: dict[str, list[dict]] = {}
    for record in db.records:
        payload.setdefault(record.domain, []).append(dict(record.attributes))
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return path


def write_tod_corpus_file(path: str | Path, n_dialogs: int = 20, seed: int = 0) -> Path:
    """Render the fixture corpus in the raw task-corpus JSON shape
    (dialog id -> {goal, log}, cumulative belief metadata on system
    turns)."""
    path = Path(path)
    corpus = build_fixture_corpus(n_dialogs, seed)
    payload = {}
    for dialog in corpus:
        goal = {}
        if dialog.goal_card:
            for domain, dg in dialog.goal_card.domains.items():
                goal[domain] = {"info": dict(dg.constraints), "reqt": list(dg.requests)}
        log = []
        for turn in dialog.turns:
            entry: dict = {"text": turn.text}
            if turn.speaker is Speaker.SYSTEM:
                metadata: dict = {}
                if turn.belief is not None:
                    for domain, slots in turn.belief.to_json().items():
                        metadata[domain] = {"semi": dict(slots), "book": {}}
                entry["metadata"] = metadata
            log.append(entry)
        payload[f"{dialog.id}.json"] = {"goal": goal, "log": log}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return path


def fixture_goal_cards(n: int = 40, seed: int = 0) -> list[GoalCard]:
    return [d.goal_card for d in build_fixture_corpus(n, seed) if d.goal_card is not None]


# -- canned predictors ---------------------------------------------------------


def perfect_predictions(dialogs, db, search=None):
    """Gold-derived predictions: the true state and the reference response
    for every system turn."""
    from .evalkit import reference_text
    from .pivot.examples import make_training_examples

    if search is None:
        search = fixture_search_provider()
    predictions = {}
    for dialog in dialogs:
        examples = make_training_examples(dialog, db, search)
        references = [reference_text(t) for t in dialog.system_turns()]
        predictions[dialog.id] = [
            (example.state, reference) for example, reference in zip(examples, references)
        ]
    return predictions


def always_tod_predictions(dialogs, db, search=None):
    """A task-only predictor: task turns get gold states and responses,
    chitchat turns get a task-mode state and a canned booking reply."""
    from .corpus import Mode
    from .pivot.state import State

    gold = perfect_predictions(dialogs, db, search)
    predictions = {}
    for dialog in dialogs:
        rows = []
        for turn, (state, response) in zip(dialog.system_turns(), gold[dialog.id]):
            if turn.mode is Mode.ODD:
                rows.append(
                    (State(Mode.TOD, ""), "what time do you want to go ? [train_id] is available .")
                )
            else:
                rows.append((state, response))
        predictions[dialog.id] = rows
    return predictions


def always_odd_predictions(dialogs, db, search=None):
    """A chitchat-only predictor: every state is chitchat with no query;
    chitchat turns get gold responses, task turns a canned social reply."""
    from .corpus import Mode
    from .pivot.state import State

    gold = perfect_predictions(dialogs, db, search)
    predictions = {}
    for dialog in dialogs:
        rows = []
        for turn, (_, response) in zip(dialog.system_turns(), gold[dialog.id]):
            text = response if turn.mode is Mode.ODD else "that sounds nice , tell me more ."
            rows.append((State(Mode.ODD, ""), text))
        predictions[dialog.id] = rows
    return predictions
