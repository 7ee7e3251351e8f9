"""Synthetic students with latent mastery and autoregressive emotions.

Used as the ground-truth oracle for desk-scale experiments. Correctness
depends on mastery, exercise difficulty and, through ``coupling``, on the
current concentration and confusion. The same coupling scales how much a
practice step adds to mastery, so a focused attempt teaches more than a
distracted one. Each exercise also carries a fixed mood offset on the
negative emotions, which makes observed emotions partly predictable from
the exercise about to be answered without tying them to correctness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MAX_INTERVAL_MIN, InteractionRecord

# emotion order: concentration, boredom, confusion, frustration
TRAIT_LOW = np.array([0.45, 0.05, 0.05, 0.05])
TRAIT_HIGH = np.array([0.75, 0.45, 0.45, 0.40])


@dataclass
class SyntheticProfile:
    students: int = 100
    length: int = 50
    concepts: int = 10
    exercises: int = 100
    skill_sd: float = 0.5
    coupling: float = 2.0  # kappa
    inertia: float = 0.3  # rho
    difficulty_sd: float = 1.0
    gain: float = 0.6
    gain_slope: float = 3.0  # how sharply concentration scales the gain
    noise_sd: float = 0.15
    mood_sd: float = 0.2
    with_emotions: bool = True
    seed: int = 0

    def validate(self) -> None:
        if min(self.students, self.length, self.concepts, self.exercises) < 1:
            raise ValueError("counts must be positive")
        if self.coupling < 0:
            raise ValueError("coupling must be >= 0")
        if not 0.0 <= self.inertia < 1.0:
            raise ValueError("inertia must lie in [0, 1)")
        if min(self.skill_sd, self.difficulty_sd, self.gain, self.gain_slope, self.noise_sd, self.mood_sd) < 0:
            raise ValueError("spreads and gain must be >= 0")


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


def simulate(profile: SyntheticProfile) -> list[InteractionRecord]:
    profile.validate()
    rng = np.random.default_rng(profile.seed)
    p = profile
    difficulty = rng.normal(0.0, p.difficulty_sd, size=p.exercises)
    concept_of = np.arange(p.exercises) % p.concepts
    mood = rng.normal(0.0, p.mood_sd, size=(p.exercises, 4))
    mood[:, 0] = 0.0
    width = len(str(p.students - 1))
    records = []
    for s in range(p.students):
        ability = rng.normal(0.0, p.skill_sd)
        mastery = ability + rng.normal(0.0, 0.5 * p.skill_sd, size=p.concepts)
        trait = rng.uniform(TRAIT_LOW, TRAIT_HIGH)
        emo = trait.copy()
        streak = np.zeros(p.concepts, dtype=int)
        last_correct = True
        ts = int(rng.integers(1_500_000_000, 1_600_000_000))
        prev_ts = None
        for _ in range(p.length):
            ex = int(rng.integers(p.exercises))
            c = int(concept_of[ex])
            # reactions to past answers scale with kappa: at 0 emotions ignore correctness
            shock = np.zeros(4)
            if not last_correct:
                shock[2:] += 0.075 * p.coupling
            if streak[c] >= 3:
                shock[0] -= 0.05 * p.coupling
            emo = p.inertia * emo + (1 - p.inertia) * trait + shock + rng.normal(0.0, p.noise_sd, 4)
            emo = np.clip(emo, 0.0, 1.0)
            emo = np.clip(emo + mood[ex], 0.0, 1.0)
            logit = mastery[c] - difficulty[ex] + p.coupling * (emo[0] - 0.5) - p.coupling * emo[2]
            correct = int(rng.random() < _sigmoid(logit))
            mastery[c] += p.gain * max(0.0, 1.0 + p.gain_slope * p.coupling * (emo[0] - 0.5))
            streak[c] = streak[c] + 1 if correct else 0
            last_correct = bool(correct)

            answer_time = int(round(np.exp(rng.uniform(np.log(5), np.log(300)))))
            interval = 0.0 if prev_ts is None else (ts - prev_ts) / 60.0
            records.append(
                InteractionRecord(
                    student_id=f"s{s:0{width}d}",
                    exercise_id=f"e{ex}",
                    concept_ids=(f"c{c}",),
                    answer_time=float(answer_time),
                    interval_time=min(interval, MAX_INTERVAL_MIN),
                    correct=correct,
                    emotions=tuple(round(float(v), 4) for v in emo) if p.with_emotions else None,
                    timestamp=float(ts),
                )
            )
            prev_ts = ts
            gap_min = int(round(np.exp(rng.uniform(0.0, np.log(1440)))))
            ts = ts + answer_time + 60 * gap_min
    return records
