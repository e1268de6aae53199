"""Streaming classroom lifecycle: communal burn-in, per-student models,
observe/predict, and prequential replay.

A session is fitted once on pooled early interactions. Each student then
gets a personalized parameter copy that is refreshed with a single EM
iteration over the burn-in data plus that student's own history after every
new response (optionally batched). Students never see each other's
post-burn-in data.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .em import FitReport, StudentObservations, fit, one_step_update
from .inference import (
    Interaction,
    Prediction,
    observation_set,
    posteriors,
    predict,
)
from .model import Parameters, default_parameters
from .tree import ConceptTree, Difficulty, QuestionMeta


@dataclass(frozen=True)
class StreamRecord:
    """One line of the interaction stream file."""

    student_id: str
    question_id: str
    kc: str
    difficulty: Difficulty
    correct: int
    seq: int

    def interaction(self) -> Interaction:
        return Interaction(self.question_id, self.kc, self.difficulty, self.correct)


@dataclass(frozen=True)
class PredictionRecord:
    student_id: str
    question_id: str
    p_correct: float
    actual: int
    seq: int


@dataclass
class StudentModel:
    student_id: str
    params: Parameters
    history: list[Interaction] = field(default_factory=list)
    pending: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


@dataclass
class ClassroomSession:
    """Shared fitted model plus per-student personalized models.

    update_batch controls how many new responses accumulate before a
    one-step EM refresh (1 = after every response); None freezes parameters,
    which is how a ground-truth model is scored on a stream.
    """

    tree: ConceptTree
    burn_in: dict[str, list[Interaction]]
    theta_init: Parameters
    fit_report: FitReport | None = None
    students: dict[str, StudentModel] = field(default_factory=dict)
    em_max_iters: int = 100
    em_tol: float = 1e-6
    threads: int = 1
    update_batch: int | None = 1

    def student_history(self, student_id: str) -> list[Interaction]:
        """Burn-in plus post-burn-in responses; the conditioning set."""
        history = list(self.burn_in.get(student_id, []))
        model = self.students.get(student_id)
        if model is not None:
            history.extend(model.history)
        return history

    def _update_dataset(self, student_id: str) -> list[StudentObservations]:
        """Burn-in from everyone, full history for the target student."""
        dataset = []
        for sid, interactions in self.burn_in.items():
            if sid == student_id:
                continue
            dataset.append(
                StudentObservations(sid, observation_set(self.tree, interactions))
            )
        dataset.append(
            StudentObservations(
                student_id,
                observation_set(self.tree, self.student_history(student_id)),
            )
        )
        return dataset


def burn_in_fit(
    tree: ConceptTree,
    burn_in: Mapping[str, Sequence[Interaction]],
    init: Parameters | None = None,
    max_iters: int = 100,
    tol: float = 1e-6,
    threads: int = 1,
    update_batch: int | None = 1,
) -> ClassroomSession:
    """Fit the shared model on pooled early interactions, to convergence."""
    if not burn_in or not any(burn_in.values()):
        raise ValueError("burn-in data must be non-empty")
    if init is None:
        init = default_parameters(tree)
    dataset = [
        StudentObservations(sid, observation_set(tree, interactions))
        for sid, interactions in burn_in.items()
    ]
    report = fit(tree, dataset, init, max_iters=max_iters, tol=tol, threads=threads)
    return ClassroomSession(
        tree=tree,
        burn_in={sid: list(v) for sid, v in burn_in.items()},
        theta_init=report.params,
        fit_report=report,
        em_max_iters=max_iters,
        em_tol=tol,
        threads=threads,
        update_batch=update_batch,
    )


def observe(
    session: ClassroomSession, student_id: str, interaction: Interaction
) -> ClassroomSession:
    """Append a response to the student's history and refresh their model
    with a single EM iteration over burn-in data plus their history."""
    model = session.students.get(student_id)
    if model is None:
        model = StudentModel(student_id=student_id, params=session.theta_init)
        session.students[student_id] = model
    with model.lock:
        model.history.append(interaction)
        if session.update_batch is None:
            return session
        model.pending += 1
        if model.pending >= session.update_batch:
            model.params = one_step_update(
                session.tree,
                model.params,
                session._update_dataset(student_id),
                threads=session.threads,
            )
            model.pending = 0
    return session


def predict_next(
    session: ClassroomSession, student_id: str, question: QuestionMeta
) -> Prediction:
    """Posterior over the question's concept given the student's history,
    blended with the emission rates. Unseen students use the shared model
    and an empty personal history."""
    model = session.students.get(student_id)
    params = model.params if model is not None else session.theta_init
    obs = observation_set(session.tree, session.student_history(student_id))
    belief = posteriors(session.tree, params, obs)
    return predict(params, belief, question)


def replay(
    session: ClassroomSession, stream: Sequence[StreamRecord]
) -> list[PredictionRecord]:
    """Prequential loop: predict each response before revealing it."""
    records = []
    for rec in stream:
        question = QuestionMeta(rec.question_id, rec.kc, rec.difficulty)
        pred = predict_next(session, rec.student_id, question)
        records.append(
            PredictionRecord(
                student_id=rec.student_id,
                question_id=rec.question_id,
                p_correct=pred.prob_correct,
                actual=rec.correct,
                seq=rec.seq,
            )
        )
        observe(session, rec.student_id, rec.interaction())
    return records


def parse_stream(document: str) -> list[StreamRecord]:
    records = []
    for i, line in enumerate(document.splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"bad stream record on line {i + 1}: {exc}") from exc
        records.append(
            StreamRecord(
                student_id=str(raw["student_id"]),
                question_id=str(raw["question_id"]),
                kc=str(raw["kc_id"]),
                difficulty=Difficulty(str(raw["difficulty"])),
                correct=int(raw["correct"]),
                seq=int(raw["seq"]),
            )
        )
    return records


def serialize_stream(records: Iterable[StreamRecord]) -> str:
    lines = [
        json.dumps(
            {
                "student_id": r.student_id,
                "question_id": r.question_id,
                "kc_id": r.kc,
                "difficulty": r.difficulty.value,
                "correct": r.correct,
                "seq": r.seq,
            },
            sort_keys=True,
        )
        for r in records
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def load_stream(path: str) -> list[StreamRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_stream(fh.read())


def serialize_predictions(records: Iterable[PredictionRecord]) -> str:
    lines = [
        json.dumps(
            {
                "student_id": r.student_id,
                "question_id": r.question_id,
                "p_correct": r.p_correct,
                "actual": r.actual,
                "seq": r.seq,
            },
            sort_keys=True,
        )
        for r in records
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def split_burn_in(
    stream: Sequence[StreamRecord], burn_in_count: int
) -> tuple[dict[str, list[Interaction]], list[StreamRecord]]:
    """First burn_in_count responses per student go to the pooled burn-in;
    the rest stay in stream order for prequential replay."""
    taken: dict[str, int] = {}
    burn_in: dict[str, list[Interaction]] = {}
    remainder: list[StreamRecord] = []
    for rec in stream:
        n = taken.get(rec.student_id, 0)
        if n < burn_in_count:
            burn_in.setdefault(rec.student_id, []).append(rec.interaction())
            taken[rec.student_id] = n + 1
        else:
            remainder.append(rec)
    return burn_in, remainder
