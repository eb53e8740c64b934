"""Regenerates tests/fixtures/corpus50 and tests/fixtures/mock50.jsonl."""
import json
import pathlib

HERE = pathlib.Path(__file__).parent

TOPICS = {
    "a_volcanoes": ("volcano", ["magma chamber", "ash plume", "lava flow", "caldera rim", "pyroclastic surge"]),
    "b_orchards": ("orchard", ["apple blossom", "pruning shears", "cider press", "grafted rootstock", "frost candle"]),
    "c_railways": ("railway", ["steam locomotive", "signal box", "narrow gauge", "freight yard", "platform clock"]),
    "d_reefs": ("coral reef", ["parrotfish", "bleaching event", "tidal lagoon", "sea anemone", "reef crest"]),
    "e_observatory": ("observatory", ["refracting telescope", "star chart", "dome shutter", "spectrograph", "night shift"]),
}
VERBS = ["records", "describes", "explains", "documents", "surveys", "revisits", "summarizes", "questions", "maps", "compares"]


def paragraphs(subject, terms):
    out = []
    for i in range(10):
        a, b = terms[i % 5], terms[(i + 2) % 5]
        out.append(
            f"Entry {i + 1} of the {subject} notes {VERBS[i]} the {a} in detail. "
            f"Field teams linked the {a} with the {b} during season {2001 + i}, "
            f"and the {subject} archive keeps their sketches."
        )
    return out


def main():
    corpus = HERE / "corpus50"
    corpus.mkdir(exist_ok=True)
    texts = []
    for name in sorted(TOPICS):
        subject, terms = TOPICS[name]
        paras = paragraphs(subject, terms)
        (corpus / f"{name}.txt").write_text("\n\n".join(paras) + "\n")
        texts.extend(paras)

    entries = []
    for i in range(120):
        token = "|<1>|" if i % 3 else "|<2>|"
        entries.append({"match": "Anchor text:", "content": json.dumps({"Reason": "shared topic", "Token": token}),
                        "input_tokens": 210, "output_tokens": 24})
    for i in range(60):
        entries.append({"match": "Clear and specific summary",
                        "content": json.dumps({"description": f"field notes, group {i}"}),
                        "input_tokens": 320, "output_tokens": 18})
    for pid, text in enumerate(texts):
        words = text.split()
        question = "Which notes say that " + " ".join(words[4:10]).rstrip(".,") + "?"
        entries.append({"match": f'\n{pid}: "',
                        "content": json.dumps({"qa_pairs": [{"question": question, "evidence_ids": [pid]}]}),
                        "input_tokens": 900, "output_tokens": 60})
    for i in range(60):
        grade = [1.0, 0.9, 0.7, 0.8][i % 4]
        entries.append({"match": "evaluates the semantic alignment", "content": json.dumps({"grade": grade}),
                        "input_tokens": 260, "output_tokens": 8})
    with open(HERE / "mock50.jsonl", "w") as f:
        for e in entries:
            f.write(json.dumps(e) + "\n")


if __name__ == "__main__":
    main()
