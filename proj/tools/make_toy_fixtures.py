#!/usr/bin/env python3
# Copyright 2026 The ctrla Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Writes the toy QA benchmark: dataset, corpus and scripted backend.

Every question has one answer document in the corpus. Eight questions have a
planted knowledge gap: the scripted draft states a wrong fact whose tokens
carry a low confidence projection, and the backend only produces the right
answer when the answer document is in the prompt.

Usage: make_toy_fixtures.py OUT_DIR
"""

import json
import pathlib
import sys

HIGH = 1.0
LOW = -1.0

# id, question, gold, answer document (title, text), segments.
# A segment is a sentence, or a (draft, corrected, low_tokens) triple for a
# planted gap.
QUESTIONS = [
    ("q01", "What is the capital of Brenvia?", "Tolmar",
     ("Brenvia", "Brenvia is a landlocked republic. The capital of Brenvia is Tolmar, a river port."),
     ["The capital of Brenvia is Tolmar."]),
    ("q02", "Who founded the Kessel Observatory?", "Ida Marsk",
     ("Kessel Observatory", "The Kessel Observatory was founded by the astronomer Ida Marsk in 1821."),
     ["The Kessel Observatory was founded by Ida Marsk."]),
    ("q03", "Which river flows through Ostrava Vale?", "Linden River",
     ("Ostrava Vale", "Ostrava Vale is a farming valley. The Linden River flows through Ostrava Vale."),
     ["The Linden River flows through Ostrava Vale."]),
    ("q04", "What color is the flag of Quorra?", "green",
     ("Flag of Quorra", "The flag of Quorra is mostly green and carries a single white star."),
     ["The flag of Quorra is mostly green.", "It carries a white star."]),
    ("q05", "What instrument did Pell Anders play?", "cello",
     ("Pell Anders", "Pell Anders was a chamber musician who played the cello for forty years."),
     ["Pell Anders played the cello."]),
    ("q06", "In which year was the Treaty of Vask signed?", "1712",
     ("Treaty of Vask", "The Treaty of Vask was signed in 1712 and ended the salt war."),
     ["The Treaty of Vask was signed in 1712."]),
    ("q07", "What is the national animal of Heldt?", "lynx",
     ("Heldt", "Heldt is a northern duchy whose national animal is the lynx."),
     ["The national animal of Heldt is the lynx."]),
    ("q08", "Who wrote the novel Glass Harbor?", "Mira Solberg",
     ("Glass Harbor", "Glass Harbor is a novel written by Mira Solberg and published in 1984."),
     ["Glass Harbor was written by Mira Solberg.", "It was published in 1984."]),
    ("q09", "What language is spoken in Tarnish?", "Velan",
     ("Tarnish", "Tarnish is a coastal province where most people speak Velan."),
     ["People in Tarnish speak Velan."]),
    ("q10", "Which mountain is the highest in Corvel?", "Mount Ardent",
     ("Corvel", "The highest mountain in Corvel is Mount Ardent, a dormant volcano."),
     ["The highest mountain in Corvel is Mount Ardent."]),
    ("q11", "What is the main export of Lune Island?", "salt",
     ("Lune Island", "Lune Island lives on its salt pans; the main export of Lune Island is salt."),
     ["The main export of Lune Island is salt."]),
    ("q12", "Who designed the Arcton Bridge?", "Otto Reyne",
     ("Arcton Bridge", "The Arcton Bridge was designed by the engineer Otto Reyne."),
     ["The Arcton Bridge was designed by Otto Reyne."]),
    ("q13", "What is the capital of Zorbia?", "Marrow",
     ("Zorbia", "Zorbia is an island kingdom. The capital of Zorbia is Marrow, on the eastern shore."),
     [("The capital of Zorbia is Quellen.", "The capital of Zorbia is Marrow.", ["Quellen."])]),
    ("q14", "Who discovered the element varnium?", "Ada Korren",
     ("Varnium", "Varnium is a soft grey metal. The element varnium was discovered by the chemist Ada Korren."),
     [("Varnium was discovered by Hugo Lindqvist.", "Varnium was discovered by Ada Korren.",
       ["Hugo", "Lindqvist."])]),
    ("q15", "Which city hosts the Selm Festival?", "Valecrest",
     ("Selm Festival", "The Selm Festival is a summer music festival hosted by the city of Valecrest."),
     ["The Selm Festival is held every summer.",
      ("It takes place in Dorrin.", "It takes place in Valecrest.", ["Dorrin."])]),
    ("q16", "What year did the Orlen Railway open?", "1874",
     ("Orlen Railway", "The Orlen Railway opened in 1874 between the two harbors."),
     [("The Orlen Railway opened in 1898.", "The Orlen Railway opened in 1874.", ["1898."])]),
    ("q17", "Who painted The Silent Orchard?", "Tomas Weil",
     ("The Silent Orchard", "The Silent Orchard is an oil painting by Tomas Weil."),
     [("The Silent Orchard was painted by Rue Calder.", "The Silent Orchard was painted by Tomas Weil.",
       ["Rue", "Calder."])]),
    ("q18", "What is the currency of Pardova?", "florin",
     ("Pardova", "Pardova is a mountain state. The currency of Pardova is the florin."),
     [("The currency of Pardova is the crown.", "The currency of Pardova is the florin.", ["crown."])]),
    ("q19", "Which sea borders Kestria to the north?", "Grey Sea",
     ("Kestria", "Kestria has a long coastline. The Grey Sea borders Kestria to the north."),
     [("The Amber Sea borders Kestria to the north.", "The Grey Sea borders Kestria to the north.", ["Amber"]),
      "Kestria has a long coastline."]),
    ("q20", "What is the tallest tower in Nerith?", "Hallow Spire",
     ("Nerith", "Nerith is a walled city. The tallest tower in Nerith is the Hallow Spire."),
     [("The tallest tower in Nerith is the Corvin Spire.", "The tallest tower in Nerith is the Hallow Spire.",
       ["Corvin"])]),
]

# 30 distractors sharing vocabulary with the answer documents.
DISTRACTORS = [
    ("Tolmar Docks", "The docks of Tolmar handle grain barges from the upper river."),
    ("Observatory history", "Many observatories were founded in the nineteenth century by private patrons."),
    ("Linden tree", "The linden tree is common in river valleys and flowers in early summer."),
    ("Star flags", "Several island states use a white star on their flag."),
    ("Cello", "The cello is a bowed string instrument played while seated."),
    ("Salt war", "The salt war was fought over coastal salt pans and ended by treaty."),
    ("Lynx", "The lynx is a wild cat found in northern forests."),
    ("Harbor novels", "Novels set in a harbor town were popular in the 1980s."),
    ("Velan language", "Velan is a language with three grammatical genders."),
    ("Volcanoes", "A dormant volcano may still show activity such as hot springs."),
    ("Salt pans", "Salt pans produce salt by evaporating seawater in shallow basins."),
    ("Bridge engineering", "Suspension bridges were designed by engineers for long spans."),
    ("Quellen", "Quellen is a spa town known for its mineral springs, far from any capital."),
    ("Hugo Lindqvist", "Hugo Lindqvist was a botanist who catalogued alpine mosses."),
    ("Dorrin", "Dorrin is a fishing village with a small winter market."),
    ("Railway mania", "Many railways opened in 1898 during a boom in private lines."),
    ("Rue Calder", "Rue Calder was a sculptor who worked mostly in bronze."),
    ("Crown coins", "The crown was a silver coin used by several kingdoms."),
    ("Amber coast", "Amber washes up on beaches after winter storms."),
    ("Corvin family", "The Corvin family built manor houses in the lowlands."),
    ("Island kingdoms", "An island kingdom often depends on fishing and trade."),
    ("Metal discovery", "Many soft metals were discovered by chemists using electrolysis."),
    ("Summer festivals", "Summer music festivals attract visitors from across the region."),
    ("Harbors", "A harbor protects ships from waves and currents."),
    ("Oil painting", "Oil painting became dominant in the fifteenth century."),
    ("Mountain states", "Mountain states often mint their own currency."),
    ("Coastlines", "A long coastline supports fishing and shipping."),
    ("Walled cities", "Walled cities kept towers at the corners of their defenses."),
    ("Chamber music", "Chamber music is played by a small group of musicians."),
    ("Duchies", "A duchy is a territory ruled by a duke or duchess."),
]

INSTRUCTION = "Answer the question in one or two sentences."


def tok(text, p):
    return {"text": text, "proj": p}


def sentence_tokens(sentence, low=()):
    return [tok(w, LOW if w in low else HIGH) for w in sentence.split()]


def contains(needles, tokens, end, note=None):
    e = {"contains": needles, "tokens": tokens, "end": end}
    if note:
        e["note"] = note
    return e


def build():
    dataset, corpus, entries = [], [], []
    for qid, question, gold, (title, text), segments in QUESTIONS:
        dataset.append({"id": qid, "question": question, "answers": [gold]})
        corpus.append({"id": "doc-" + qid, "title": title, "text": text})

    tvq, regen, later, first = [], [], [], []
    for qid, question, gold, (title, text), segments in QUESTIONS:
        qkey = "Question: " + question + "\n"
        for i, seg in enumerate(segments):
            last = i == len(segments) - 1
            if isinstance(seg, tuple):
                draft, corrected, low = seg
                draft_toks = sentence_tokens(draft, low)
                regen.append(contains([qkey, "Document [", text], sentence_tokens(corrected), last,
                                      qid + " with answer document"))
                regen.append(contains([qkey, "Document ["], draft_toks, last, qid + " without answer document"))
                tvq.append(contains(["Question: " + question + "\nDraft:"],
                                    [tok(w, 0.0) for w in (title + " " + question.rstrip("?")).split()],
                                    False, qid + " validation query"))
            else:
                draft_toks = sentence_tokens(seg)
            if i == 0:
                first.append(contains([qkey + "Answer:"], draft_toks, last, qid + " segment 1"))
            else:
                later.append(contains([qkey + "Answer: "], draft_toks, last, qid + " segment %d" % (i + 1)))

    entries = tvq + regen + later + first
    script = {
        "model_id": "toy-8x4",
        "hidden_dim": 8,
        "layer_count": 4,
        "encoder": {"gain_jitter": 0.5},
        "entries": entries,
    }
    for k, (title, text) in enumerate(DISTRACTORS):
        corpus.append({"id": "doc-x%02d" % (k + 1), "title": title, "text": text})
    return dataset, corpus, script


def main():
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    out = pathlib.Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    dataset, corpus, script = build()
    assert len(dataset) == 20 and len(corpus) == 50
    with open(out / "qa20.jsonl", "w") as f:
        for row in dataset:
            f.write(json.dumps(row) + "\n")
    with open(out / "corpus50.jsonl", "w") as f:
        for row in corpus:
            f.write(json.dumps(row) + "\n")
    with open(out / "toy_script.json", "w") as f:
        json.dump(script, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
