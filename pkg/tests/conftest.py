import random
from decimal import Decimal

import pytest

from siked.core import ALL_STRATEGIES, Origin, QuestionRecord, RationaleSample, Strategy


def make_sample(
    qid="q1",
    strategy=Strategy.COT,
    rationale="Final Answer: 1",
    extracted=Decimal(1),
    correct=True,
    origin=Origin.TEACHER,
):
    return RationaleSample(qid, strategy, rationale, extracted, correct, origin)


def random_samples(rng: random.Random, n: int, n_questions: int = 10):
    samples = []
    for i in range(n):
        qid = f"q{rng.randrange(n_questions)}"
        strategy = rng.choice(ALL_STRATEGIES)
        answer = rng.randrange(100)
        origin = (
            Origin.TEACHER
            if rng.random() < 0.5
            else Origin.student(rng.randint(1, 3), rng.randint(1, 10))
        )
        samples.append(
            make_sample(
                qid,
                strategy,
                f"Working sample {i}.\nFinal Answer: {answer}",
                Decimal(answer),
                True,
                origin,
            )
        )
    return samples


@pytest.fixture
def questions():
    return [
        QuestionRecord("q1", "What is 2 plus 3?", Decimal(5)),
        QuestionRecord("q2", "What is 10 minus 4?", Decimal(6)),
        QuestionRecord("q3", "What is 7 times 2?", Decimal(14)),
    ]
