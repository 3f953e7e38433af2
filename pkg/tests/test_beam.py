import itertools
import math

import pytest
import torch

from ocmr.beam import beam_search

EOS = 3


def table_step_fn(table):
    """Next-token log-probs looked up by prefix from a hand-built table."""

    def step(prefixes):
        rows = [table[tuple(p)] for p in prefixes]
        return torch.log(torch.tensor(rows, dtype=torch.float64))

    return step


def enumerate_best(table, max_len):
    """Brute force: score every sequence over the 4-token vocabulary."""
    best = (-math.inf, None)
    for length in range(1, max_len + 1):
        for seq in itertools.product(range(4), repeat=length):
            # valid sequences end at EOS or at the length cap, no interior EOS
            interior, last = seq[:-1], seq[-1]
            if EOS in interior:
                continue
            if last == EOS and length < 1:
                continue
            if last != EOS and length < max_len:
                continue
            score = 0.0
            prefix = []
            for token in seq:
                score += math.log(table[tuple(prefix)][token])
                prefix.append(token)
            emitted = seq[:-1] if last == EOS else seq
            if score > best[0]:
                best = (score, list(emitted))
    return best


@pytest.fixture
def toy_table():
    # hand-built 3-step distribution over tokens {0, 1, 2, EOS=3}; the greedy
    # path (token 1 first) is a trap: starting with 0 pays off at step two
    table = {
        (): [0.30, 0.40, 0.25, 0.05],
        (0,): [0.05, 0.15, 0.10, 0.70],
        (1,): [0.30, 0.25, 0.30, 0.15],
        (2,): [0.25, 0.25, 0.25, 0.25],
    }
    for a in range(3):
        for b in range(3):
            table[(a, b)] = [0.05, 0.1, 0.05, 0.80]
    for a in range(3):
        for b in range(3):
            for c in range(3):
                table[(a, b, c)] = [0.0, 0.0, 0.0, 1.0]
    return table


def test_beam_matches_exhaustive_enumeration(toy_table):
    hypotheses = beam_search(table_step_fn(toy_table), eos_id=EOS, beam_size=5, max_len=3)
    best_score, best_tokens = enumerate_best(toy_table, max_len=3)
    assert hypotheses[0].tokens == best_tokens
    assert hypotheses[0].score == pytest.approx(best_score, abs=1e-12)


def test_beam_one_is_greedy(toy_table):
    step = table_step_fn(toy_table)
    greedy_tokens = []
    prefix = []
    for _ in range(3):
        probs = step([prefix])[0]
        token = int(torch.argmax(probs))
        if token == EOS:
            break
        greedy_tokens.append(token)
        prefix.append(token)
    hypotheses = beam_search(step, eos_id=EOS, beam_size=1, max_len=3)
    assert hypotheses[0].tokens == greedy_tokens


def test_wider_beam_never_worse(toy_table):
    step = table_step_fn(toy_table)
    narrow = beam_search(step, eos_id=EOS, beam_size=1, max_len=3)[0].score
    wide = beam_search(step, eos_id=EOS, beam_size=5, max_len=3)[0].score
    assert wide >= narrow - 1e-12


def test_max_len_caps_sequences():
    table = {(): [0.9, 0.05, 0.04, 0.01]}

    def step(prefixes):
        return torch.log(torch.tensor([[0.9, 0.05, 0.04, 0.01]] * len(prefixes)))

    hypotheses = beam_search(step, eos_id=EOS, beam_size=2, max_len=4)
    assert all(len(h.tokens) <= 4 for h in hypotheses)


def test_immediate_eos_yields_empty_tokens():
    def step(prefixes):
        return torch.log(torch.tensor([[0.01, 0.01, 0.01, 0.97]] * len(prefixes)))

    hypotheses = beam_search(step, eos_id=EOS, beam_size=3, max_len=4)
    assert hypotheses[0].tokens == []
