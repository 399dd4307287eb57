"""Deterministic synthetic legal-case fabrication for tests and smoke runs.

Cases are assembled from seeded word banks in the marker layout the corpus
parser understands (FACTS/FOCUS/REASONING/JUDGMENT/ARTICLES). Charges map to
fixed statute citations so retrieval has learnable structure, and criminal
facts carry a prosecution-recommendation sentence for the claim-stripping
path. Facts are padded with filler sentences past the knowledge-base length
threshold unless asked otherwise.
"""

from __future__ import annotations

import random
from datetime import date, timedelta
from pathlib import Path

from .corpus import CaseDocument, CorpusStore, StatuteRef, parse_judgment

_NAMES = ("Alder", "Brook", "Crane", "Dovel", "Ember", "Frost", "Gale", "Harrow",
          "Ivers", "Joss", "Kerr", "Lumen", "Marsh", "Noll", "Orrin", "Pike")
_PLACES = ("Northgate", "Eastbrook", "Southmere", "Westfall", "Midtown", "Riverside",
           "Hillcrest", "Lakeshore")
_ITEMS = ("a delivery van", "industrial copper wiring", "warehouse inventory",
          "a consignment of electronics", "construction equipment", "medical supplies")

CRIMINAL_CHARGES: dict[str, tuple[tuple[str, int], ...]] = {
    "theft": (("Penal Code", 310),),
    "fraud": (("Penal Code", 322), ("Penal Code", 323)),
    "bribery": (("Penal Code", 441), ("Penal Code", 442)),
    "assault": (("Penal Code", 250),),
    "embezzlement": (("Penal Code", 335), ("Penal Code", 336)),
}

CIVIL_CAUSES: dict[str, tuple[tuple[str, int], ...]] = {
    "contract dispute": (("Civil Code", 509), ("Civil Code", 577)),
    "property damage": (("Civil Code", 1165),),
    "loan repayment": (("Civil Code", 667), ("Civil Code", 675)),
}

ADMIN_CAUSES: dict[str, tuple[tuple[str, int], ...]] = {
    "license revocation": (("Administrative Procedure Act", 70),),
    "penalty review": (("Administrative Procedure Act", 74), ("Administrative Penalty Act", 29)),
}

_FILLERS = (
    "Witness statements were collected during the investigation and entered into the record.",
    "The parties submitted documentary evidence which the court examined in open session.",
    "Surveillance records and transaction logs corroborated the timeline of events.",
    "Both sides were given full opportunity to present arguments and cross-examine.",
    "The procedural requirements for service and notice were satisfied in this matter.",
)


def _refs(pairs: tuple[tuple[str, int], ...]) -> frozenset[StatuteRef]:
    return frozenset(
        StatuteRef(law, num, f"{law} Article {num}") for law, num in pairs
    )


def _citation_text(pairs: tuple[tuple[str, int], ...]) -> str:
    return "; ".join(f"{law} Article {num}" for law, num in sorted(pairs))


def synth_case(
    index: int,
    seed: int,
    kind: str = "online",
    domain: str | None = None,
    min_fact_chars: int = 160,
) -> CaseDocument:
    """Fabricate one case; identical (index, seed, kind) always reproduce it."""
    rng = random.Random((seed << 20) ^ index)
    if domain is None:
        domain = rng.choices(("criminal", "civil", "administrative"), weights=(6, 3, 1))[0]

    name = rng.choice(_NAMES)
    other = rng.choice([n for n in _NAMES if n != name])
    place = rng.choice(_PLACES)
    item = rng.choice(_ITEMS)
    amount = rng.randrange(2, 95) * 1000
    months = rng.randrange(6, 72)
    probation = rng.randrange(0, 24)
    fine = rng.randrange(1, 50) * 500
    published = date(2019, 1, 1) + timedelta(days=rng.randrange(0, 1200))

    if domain == "criminal":
        cause = rng.choice(sorted(CRIMINAL_CHARGES))
        articles = CRIMINAL_CHARGES[cause]
        fact_sentences = [
            f"On an evening in {place}, the defendant {name} took {item} belonging to {other}, "
            f"valued at {amount}.",
            f"The defendant {name} was apprehended after the incident and admitted involvement "
            f"during questioning.",
            f"The prosecution recommends a sentence of {months + 6} months for the offence of {cause}.",
        ]
        focus = f"The dispute focus is whether the conduct of {name} constitutes {cause}."
        reason = (
            f"The court holds that the conduct of {name} constitutes {cause}. "
            f"{_citation_text(articles)} provides the applicable rule, and the evidence "
            f"establishes the elements of {cause} beyond reasonable doubt."
        )
        judg_parts = [
            f"The court finds the defendant {name} guilty of {cause}.",
            f"The defendant is sentenced to imprisonment of {months} months.",
        ]
        if probation > 0:
            judg_parts.append(f"A probation of {probation} months is ordered.")
        judg_parts.append(f"A fine of {fine} is imposed.")
        judgment = " ".join(judg_parts)
    elif domain == "civil":
        cause = rng.choice(sorted(CIVIL_CAUSES))
        articles = CIVIL_CAUSES[cause]
        outcome = rng.choice(("upheld", "dismissed"))
        fact_sentences = [
            f"The claimant {name} entered into an agreement with {other} in {place} concerning "
            f"{item}, with payment of {amount} due on completion.",
            f"The respondent {other} failed to perform as agreed and the claimant seeks relief "
            f"for the resulting loss.",
        ]
        focus = f"The dispute focus is whether the agreement between {name} and {other} was breached."
        reason = (
            f"The court holds that the evidence concerning the {cause} supports the claimant. "
            f"{_citation_text(articles)} provides the measure of liability in this matter."
        )
        judgment = f"The claim is {outcome}."
        if outcome == "upheld":
            judgment += f" The respondent shall pay compensation of {amount} to the claimant."
    else:
        cause = rng.choice(sorted(ADMIN_CAUSES))
        articles = ADMIN_CAUSES[cause]
        outcome = rng.choice(("revoked", "sustained"))
        fact_sentences = [
            f"The agency imposed a penalty of {fine} on {name} in {place} in a {cause} matter "
            f"involving {item}.",
            f"{name} sought review, arguing the agency exceeded its authority under the governing act.",
        ]
        focus = f"The dispute focus is whether the agency decision against {name} was lawful."
        reason = (
            f"The court holds that the record of the {cause} proceeding must satisfy "
            f"{_citation_text(articles)}, and reviews the agency action on that basis."
        )
        judgment = f"The administrative decision is {outcome}."

    filler = list(_FILLERS)
    rng.shuffle(filler)
    while len(" ".join(fact_sentences)) < min_fact_chars and filler:
        fact_sentences.append(filler.pop())
    fact = " ".join(fact_sentences)

    doc_id = f"{kind[:3]}-{index:04d}"
    lines = [
        f"CASE-ID: {doc_id}",
        f"DOMAIN: {domain}",
        f"CAUSE: {cause}",
        f"DATE: {published.isoformat()}",
        f"FACTS: {fact}",
    ]
    if kind != "online":
        lines.append(f"FOCUS: {focus}")
    lines += [
        f"REASONING: {reason}",
        f"JUDGMENT: {judgment}",
        f"ARTICLES: {_citation_text(articles)}",
    ]
    return parse_judgment("\n".join(lines))


def synth_store(n: int, seed: int, kind: str = "online", min_fact_chars: int = 160,
                domain: str | None = None) -> CorpusStore:
    docs = [synth_case(i, seed, kind=kind, min_fact_chars=min_fact_chars, domain=domain)
            for i in range(n)]
    return CorpusStore(documents=docs, kind=kind)


def related_test_store(online: CorpusStore, n: int, seed: int) -> CorpusStore:
    """Test cases whose facts overlap specific knowledge-base documents.

    Each test case reuses one online document's fact with light edits, so
    retrieval has a well-defined best match while gold sections stay intact.
    """
    rng = random.Random(seed)
    chosen = rng.sample(list(online.documents), k=min(n, len(online)))
    docs = []
    for i, src in enumerate(chosen):
        raw = src.raw_text.replace(f"CASE-ID: {src.id}", f"CASE-ID: tst-{i:04d}")
        if "FOCUS:" not in raw:
            focus = f"The dispute focus is whether the matter of {src.cause_of_action} is established."
            raw = raw.replace("REASONING:", f"FOCUS: {focus}\nREASONING:")
        docs.append(parse_judgment(raw))
    return CorpusStore(documents=docs, kind="test")


def write_raw_file(store: CorpusStore, path, delimiter: str = "=====") -> None:
    """Serialize a store back to the multi-document raw text format."""
    chunks = [doc.raw_text for doc in store]
    text = f"\n{delimiter}\n".join(chunks) + "\n"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
