#!/usr/bin/env python3
"""Regenerate demo/exchanges.jsonl and demo/mock_script.json.

The mock script is pinned per exchange: every entry's matcher is a phrase
that occurs in that exchange's IQ, IA, and synthesized answer, so every
request the pipeline makes for the exchange (perspectives, synthesis,
candidate generation, judges) matches its own entries and nothing else.
Entries for one exchange are consumed strictly in order, which keeps the
script aligned even when a run is killed and resumed.

Coverage built into the five exchanges:
  e01  one candidate accepted, one rejected as already answerable by the IA
  e02  a perspective refusal (pipeline continues with fewer perspectives)
  e03  a transient provider failure (retried), one ungrounded candidate
  e04  messy candidate formatting plus a duplicate, one CA-unanswerable
  e05  a judge that never answers YES/NO (judge-failure bucket)
"""

import json
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
DEMO = ROOT / "demo"

EXCHANGES = [
    {
        "id": "e01",
        "iq": "How do glaciers carve valleys over time?",
        "ia": "Moving ice is how glaciers carve valleys, grinding them down over many centuries.",
    },
    {
        "id": "e02",
        "iq": "Why do ocean tides bulge on both sides of the Earth at once?",
        "ia": "Ocean tides bulge twice a day because of the Moon, though the far-side part is confusing.",
    },
    {
        "id": "e03",
        "iq": "Why does honey never spoil even after years on the shelf?",
        "ia": "People say honey never spoils because it is mostly sugar.",
    },
    {
        "id": "e04",
        "iq": "Why is the sky blue at noon but red at sunset?",
        "ia": "The sky is blue at noon because air scatters blue light more than red.",
    },
    {
        "id": "e05",
        "iq": "Do violins age into a better sound as the wood gets older?",
        "ia": "Many players believe violins age well, but the evidence is mixed.",
    },
]

# Phrase present in the IQ, the IA, and the scripted synthesis reply below.
PINS = {
    "e01": "glaciers carve",
    "e02": "tides bulge",
    "e03": "honey never spoil",
    "e04": "blue at noon",
    "e05": "violins age",
}


def entry(pin: str, reply: str | None = None, fail: str | None = None) -> dict:
    e: dict = {"match": pin}
    if reply is not None:
        e["reply"] = reply
    if fail is not None:
        e["fail"] = fail
    return e


def build_script() -> list[dict]:
    s: list[dict] = []

    # e01: three perspectives, two candidates; the second is already covered
    # by the initial answer, so the IA judge says YES and it is rejected.
    p = PINS["e01"]
    s += [
        entry(p, "Glacial ice acts like a slow conveyor, plucking blocks of rock from the valley floor where meltwater refreezes in cracks."),
        entry(p, "From a climate angle, snowfall above the equilibrium line keeps feeding the ice, so the grinding continues for millennia."),
        entry(p, "Sediment studies show moraines and rock flour recording exactly what the ice removed and where it dropped the debris."),
        entry(p, "Alpine glaciers carve valleys through plucking and abrasion: meltwater refreezes in cracks and tears blocks free, embedded debris grinds the floor, snowfall above the equilibrium line sustains the flow for millennia, and moraines record where the removed material ended up, leaving the classic U-shaped profile."),
        entry(p, "What keeps the ice moving downhill?<sep>What do glaciers do to valleys over many centuries?"),
        entry(p, "YES"),   # c1 answerable by CA
        entry(p, "NO"),    # c1 not answerable by IA
        entry(p, "YES"),   # c1 grounded
        entry(p, "YES"),   # c2 answerable by CA
        entry(p, "YES"),   # c2 answerable by IA -> rejected
        entry(p, "YES"),   # c2 grounded (still judged; rejection already decided)
    ]

    # e02: second perspective refuses, synthesis proceeds with one answer.
    p = PINS["e02"]
    s += [
        entry(p, "The Moon pulls the near side of the ocean harder than it pulls the Earth's center, and the center harder than the far side, so water piles up at both ends of that line."),
        entry(p, fail="refusal"),
        entry(p, "The twice-daily tides bulge because lunar gravity varies across the planet: the near side is pulled harder than the center and the center harder than the far side, so water rises both under the Moon and opposite it."),
        entry(p, "How much weaker is the Moon's pull on the far side than on the near side?"),
        entry(p, "YES"),
        entry(p, "NO"),
        entry(p, "YES"),
    ]

    # e03: first perspective request fails transiently and is retried; the
    # second candidate drifts off-topic and fails the grounding judge.
    p = PINS["e03"]
    s += [
        entry(p, fail="transient"),
        entry(p, "Honey is hygroscopic: with water activity far below what bacteria and most fungi need, anything that lands in it is desiccated rather than fed."),
        entry(p, "Chemically, the pH sits near 4 and glucose oxidase keeps generating small amounts of hydrogen peroxide, both hostile to microbes."),
        entry(p, "Archaeologists have opened sealed pots of honey that were still edible after thousands of years, which is the practical proof."),
        entry(p, "Jarred honey never spoils because almost nothing can grow in it: the water activity is too low for microbes, the pH sits near 4, and glucose oxidase keeps producing traces of hydrogen peroxide, which is why sealed pots have stayed edible for thousands of years."),
        entry(p, "What is the pH of typical honey?<sep>Which foods in a normal pantry spoil the fastest?"),
        entry(p, "YES"),
        entry(p, "NO"),
        entry(p, "YES"),
        entry(p, "YES"),
        entry(p, "NO"),
        entry(p, "NO"),   # c2 not grounded -> rejected
    ]

    # e04: candidate list arrives with enumeration, quotes, and a duplicate;
    # after normalization two candidates remain and one is unanswerable by
    # the CA.
    p = PINS["e04"]
    s += [
        entry(p, "Air molecules are far smaller than visible wavelengths, so they scatter short blue wavelengths much more strongly than long red ones."),
        entry(p, "Geometry matters: at sunset the light crosses far more atmosphere, so most of the blue has been scattered out of the beam before it reaches the observer."),
        entry(p, "Human eyes are more sensitive to blue than to violet, which is why the sky does not look violet even though violet scatters even more."),
        entry(p, "The sky looks blue at noon because small air molecules scatter short wavelengths most strongly, and our eyes favor blue over violet; at sunset the slanted path through the atmosphere is much longer, so the blue is scattered away before the light arrives and the long red wavelengths remain."),
        entry(p, "1. Why does scattering favor short wavelengths?<sep>- \"Why does scattering favor short wavelengths?\"<sep>2) How do clouds stay white on a clear day?"),
        entry(p, "YES"),
        entry(p, "NO"),
        entry(p, "YES"),
        entry(p, "NO"),   # c2 not answerable by CA -> rejected
        entry(p, "NO"),
        entry(p, "YES"),
    ]

    # e05: the CA judge for the second candidate never gives a parseable
    # verdict, so the candidate lands in the judge-failure bucket.
    p = PINS["e05"]
    s += [
        entry(p, "Wood chemistry changes with age: hemicellulose slowly degrades, the wood stiffens and loses damping, which can brighten the tone."),
        entry(p, "Blind listening tests tell a humbling story: soloists could not reliably distinguish celebrated old instruments from good modern ones."),
        entry(p, "Playing itself may matter as much as age, since regular vibration and humidity cycles keep changing how the plates respond."),
        entry(p, "Whether violins age into a better sound is contested: hemicellulose degradation does stiffen the wood and reduce damping, which can brighten tone, and regular playing keeps changing the plates, but blind listening tests found soloists could not reliably pick celebrated old instruments over good modern ones."),
        entry(p, "What did the blind listening tests find?<sep>How does hemicellulose degradation change the wood's damping?"),
        entry(p, "YES"),
        entry(p, "NO"),
        entry(p, "YES"),
        entry(p, "Hmm, that would depend on the instrument."),
        entry(p, "Hard to say without more detail."),
    ]
    return s


def main() -> None:
    DEMO.mkdir(parents=True, exist_ok=True)
    with (DEMO / "exchanges.jsonl").open("w", encoding="utf-8") as fh:
        for ex in EXCHANGES:
            fh.write(json.dumps(ex, ensure_ascii=False) + "\n")
    with (DEMO / "mock_script.json").open("w", encoding="utf-8") as fh:
        json.dump(build_script(), fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    print(f"wrote {DEMO / 'exchanges.jsonl'} ({len(EXCHANGES)} exchanges)")
    print(f"wrote {DEMO / 'mock_script.json'} ({len(build_script())} entries)")


if __name__ == "__main__":
    main()
