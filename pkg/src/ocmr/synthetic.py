"""Deterministic toy world for desk-scale end-to-end verification.

Every rule grants a named benefit subject to a conjunction of conditions::

    title: The {benefit} benefit
    body:  You can get the {benefit} benefit if you {c1}, and if you {c2}, ...

Conditions are (verb-phrase template, pseudo-word) pairs, globally unique
across rules. Benefit names are shared by pairs of rules ("twins"), so a
question alone rarely identifies the gold rule: retrieval is near-perfect at
top-5 but imperfect at top-1, which is what makes multi-candidate fusion
genuinely useful on this benchmark.

Each dialogue instance samples a gold rule and a target decision:

* Yes: every condition is resolved positively, by a scenario fact
  ("I {c}.") or a history turn ("Do you {c}?" -> Yes).
* No: one condition is answered No in the final history turn.
* Inquire: no contradictions, at least one condition resolved and at least
  one unresolved; the gold answer is "Do you {c}?" for the first unresolved
  condition in rule order.

Scenarios may also contain up to two distractor facts taken from other rules
(at most one per foreign rule, so no foreign rule ever looks fully
satisfied). The generator emits exact per-EDU entailment states as a
by-product: a fulfilled condition (history-Yes or scenario-stated) is
ENTAILMENT, one answered No is CONTRADICTION, everything else NEUTRAL.
Scenario fulfillment is invisible to the history-driven edit-distance
heuristic, so its (low) rate is exactly the heuristic's label noise, kept
under the benchmark's 5% budget.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import (
    DatasetSplit,
    DialogueInstance,
    DialogueTurn,
    KnowledgeBase,
    RuleDocument,
)
from .entailment import EntailmentLabel, EntailmentLabelSequence
from .errors import ConfigError
from .segmentation import SegmenterConfig, segment_kb

CONDITION_TEMPLATES = (
    "live in {}",
    "work as a {}",
    "own a {}",
    "carry a {}",
    "study {}",
    "teach {}",
    "grow {}",
    "collect {}",
)

_CONSONANTS = "bdfglmnprstvz"
_VOWELS = "aeiou"
_RESERVED = {
    "you", "can", "get", "the", "benefit", "if", "and", "do", "i", "am",
    "yes", "no", "live", "in", "work", "as", "a", "own", "carry", "study",
    "teach", "grow", "collect",
}


@dataclass
class SyntheticSpec:
    num_rules: int = 40
    conditions_min: int = 2
    conditions_max: int = 4
    vocab_size: int = 200
    num_train: int = 2000
    num_dev: int = 200
    num_test: int = 200
    seed: int = 13
    unseen_fraction: float = 0.3
    max_distractors: int = 2

    def __post_init__(self):
        if min(self.num_rules, self.num_train, self.num_dev, self.num_test) < 1:
            raise ConfigError("rule and split counts must be positive")
        if not 0.0 <= self.unseen_fraction <= 1.0:
            raise ConfigError("unseen_fraction must be in [0, 1]")
        if self.conditions_min < 2 or self.conditions_max < self.conditions_min:
            raise ConfigError("conditions range must satisfy 2 <= min <= max")


@dataclass
class Condition:
    template: str
    word: str

    @property
    def phrase(self) -> str:
        return self.template.format(self.word)


@dataclass
class SyntheticWorld:
    kb: KnowledgeBase
    train: DatasetSplit
    dev: DatasetSplit
    test: DatasetSplit
    true_labels: dict[str, EntailmentLabelSequence] = field(default_factory=dict)
    conditions: dict[str, list[Condition]] = field(default_factory=dict)

    def splits(self) -> list[DatasetSplit]:
        return [self.train, self.dev, self.test]


def _pseudo_word(rng: random.Random, taken: set[str]) -> str:
    while True:
        word = "".join(
            rng.choice(_CONSONANTS) + rng.choice(_VOWELS)
            for _ in range(rng.choice((2, 3)))
        )
        if word not in taken and word not in _RESERVED:
            taken.add(word)
            return word


def _make_rules(spec: SyntheticSpec, rng: random.Random):
    taken: set[str] = set()
    num_benefits = (spec.num_rules + 1) // 2
    if spec.conditions_max > len(CONDITION_TEMPLATES):
        raise ConfigError(
            f"conditions_max={spec.conditions_max} exceeds the "
            f"{len(CONDITION_TEMPLATES)} available condition templates"
        )
    if spec.vocab_size - num_benefits < spec.num_rules * spec.conditions_max:
        raise ConfigError(
            f"vocab_size={spec.vocab_size} too small for {spec.num_rules} rules "
            f"with up to {spec.conditions_max} conditions each "
            f"(need at least {num_benefits + spec.num_rules * spec.conditions_max})"
        )
    benefit_words = [_pseudo_word(rng, taken) for _ in range(num_benefits)]
    word_pool = [_pseudo_word(rng, taken) for _ in range(spec.vocab_size - num_benefits)]
    # condition words are single-use across the whole knowledge base and
    # templates are distinct within a rule: the edit-distance heuristic never
    # ties between two conditions, and unseen rules keep genuinely novel words
    documents = {}
    conditions: dict[str, list[Condition]] = {}
    cursor = 0
    for i in range(spec.num_rules):
        doc_id = f"rule_{i:03d}"
        benefit = benefit_words[i // 2]
        n = rng.randint(spec.conditions_min, spec.conditions_max)
        templates = rng.sample(CONDITION_TEMPLATES, n)
        conds = [
            Condition(template=t, word=w)
            for t, w in zip(templates, word_pool[cursor : cursor + n])
        ]
        cursor += n
        clauses = [f"if you {conds[0].phrase},"]
        clauses += [f"and if you {c.phrase}," for c in conds[1:]]
        clauses[-1] = clauses[-1][:-1] + "."
        body = f"You can get the {benefit} benefit " + " ".join(clauses)
        documents[doc_id] = RuleDocument(
            doc_id=doc_id, title=f"The {benefit} benefit", body=body
        )
        conditions[doc_id] = conds
    return documents, conditions


def _make_instance(
    uid: str,
    doc_id: str,
    conditions: dict[str, list[Condition]],
    documents: dict[str, RuleDocument],
    decision: str,
    spec: SyntheticSpec,
    rng: random.Random,
):
    conds = conditions[doc_id]
    benefit = documents[doc_id].title.split()[1]
    n = len(conds)

    # per-condition status: "scenario", "yes", "no", or "open". Histories are
    # turn-heavy and scenario fulfillment is rare: a scenario-satisfied
    # condition is truly ENTAILMENT but invisible to the edit-distance
    # heuristic, so its rate bounds the heuristic's label noise.
    status = ["open"] * n
    if decision == "Yes":
        for i in range(n):
            status[i] = "scenario" if rng.random() < 0.06 else "yes"
    elif decision == "No":
        failing = rng.randrange(n)
        for i in range(n):
            if i == failing:
                status[i] = "no"
            else:
                r = rng.random()
                status[i] = "scenario" if r < 0.05 else ("yes" if r < 0.7 else "open")
    else:  # Inquire
        for i in range(n):
            r = rng.random()
            status[i] = "scenario" if r < 0.04 else ("yes" if r < 0.55 else "open")
        if "open" not in status:
            status[rng.randrange(n)] = "open"
        if all(s == "open" for s in status):
            keep_open = rng.randrange(n)
            resolve = rng.choice([i for i in range(n) if i != keep_open])
            status[resolve] = "yes"

    scenario_facts = [conds[i].phrase for i in range(n) if status[i] == "scenario"]
    n_distract = rng.randint(0, spec.max_distractors)
    foreign_ids = rng.sample([d for d in conditions if d != doc_id], n_distract)
    for foreign in foreign_ids:
        scenario_facts.append(rng.choice(conditions[foreign]).phrase)
    rng.shuffle(scenario_facts)
    scenario = " ".join(f"I {phrase}." for phrase in scenario_facts)

    turns = []
    for i in range(n):
        if status[i] == "yes":
            turns.append(DialogueTurn(f"Do you {conds[i].phrase}?", "Yes"))
    if decision == "No":
        failing = status.index("no")
        turns.append(DialogueTurn(f"Do you {conds[failing].phrase}?", "No"))

    if decision == "Yes":
        gold_answer = "Yes"
    elif decision == "No":
        gold_answer = "No"
    else:
        first_open = status.index("open")
        gold_answer = f"Do you {conds[first_open].phrase}?"

    labels = [EntailmentLabel.NEUTRAL]  # main clause EDU
    for i in range(n):
        if status[i] in ("yes", "scenario"):  # fulfilled either way
            labels.append(EntailmentLabel.ENTAILMENT)
        elif status[i] == "no":
            labels.append(EntailmentLabel.CONTRADICTION)
        else:
            labels.append(EntailmentLabel.NEUTRAL)

    instance = DialogueInstance(
        utterance_id=uid,
        tree_id=f"{doc_id}-tree",
        gold_doc_id=doc_id,
        question=f"Can I get the {benefit} benefit?",
        scenario=scenario,
        history=tuple(turns),
        gold_answer=gold_answer,
        evidence=tuple(scenario_facts),
    )
    return instance, EntailmentLabelSequence(doc_id=doc_id, labels=tuple(labels))


def generate(spec: SyntheticSpec) -> SyntheticWorld:
    """Generate the knowledge base and splits; deterministic for a fixed seed."""
    rng = random.Random(spec.seed)
    documents, conditions = _make_rules(spec, rng)
    doc_ids = sorted(documents)
    # unseen rules are held out as whole benefit pairs, so an unseen rule's
    # benefit word and condition words never carry training supervision
    pairs = [doc_ids[i : i + 2] for i in range(0, len(doc_ids), 2)]
    num_unseen_pairs = round(len(pairs) * spec.unseen_fraction)
    unseen_pairs = rng.sample(range(len(pairs)), num_unseen_pairs)
    unseen = {doc_id for p in unseen_pairs for doc_id in pairs[p]}
    seen = [d for d in doc_ids if d not in unseen]
    if not seen:
        raise ConfigError("unseen_fraction leaves no seen rules to train on")

    kb = KnowledgeBase(
        documents=documents,
        seen_ids=frozenset(seen),
        unseen_ids=frozenset(unseen),
    )
    kb = segment_kb(kb, SegmenterConfig())

    true_labels: dict[str, EntailmentLabelSequence] = {}

    def make_split(name: str, count: int, allow_unseen: bool) -> DatasetSplit:
        instances = []
        for i in range(count):
            uid = f"{name}_{i:05d}"
            if allow_unseen and unseen and rng.random() < spec.unseen_fraction:
                doc_id = rng.choice(sorted(unseen))
            else:
                doc_id = rng.choice(seen)
            decision = rng.choices(("Yes", "No", "Inquire"), weights=(0.35, 0.3, 0.35))[0]
            instance, labels = _make_instance(
                uid, doc_id, conditions, documents, decision, spec, rng
            )
            instances.append(instance)
            true_labels[uid] = labels
        return DatasetSplit(name=name, instances=instances)

    train = make_split("train", spec.num_train, allow_unseen=False)
    dev = make_split("dev", spec.num_dev, allow_unseen=True)
    test = make_split("test", spec.num_test, allow_unseen=True)
    return SyntheticWorld(
        kb=kb, train=train, dev=dev, test=test,
        true_labels=true_labels, conditions=conditions,
    )


def oracle_decision(instance: DialogueInstance, gold_doc: RuleDocument) -> str:
    """Resolve the gold rule's conditions from scenario and history by exact
    phrase matching; used to check that the generated task is solvable."""
    condition_phrases = []
    for edu in gold_doc.edus[1:]:
        phrase = edu.rstrip(".,")
        for prefix in ("and if you ", "if you "):
            if phrase.startswith(prefix):
                phrase = phrase[len(prefix):]
                break
        condition_phrases.append(phrase)

    scenario_facts = {
        fact.strip().rstrip(".") for fact in instance.scenario.replace("I ", "\n").split("\n")
    }
    asked = {}
    for turn in instance.history:
        q = turn.follow_up_question.rstrip("?").strip()
        if q.startswith("Do you "):
            asked[q[len("Do you "):]] = turn.follow_up_answer

    open_phrases = []
    for phrase in condition_phrases:
        if asked.get(phrase) == "No":
            return "No"
        if asked.get(phrase) == "Yes" or phrase in scenario_facts:
            continue
        open_phrases.append(phrase)
    if not open_phrases:
        return "Yes"
    return f"Do you {open_phrases[0]}?"
