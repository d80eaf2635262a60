#!/usr/bin/env python3
"""Generate the bundled fixture files under fixtures/.

Everything is synthetic and seeded, so rerunning the script reproduces the
committed files byte for byte.

    python3 scripts/make_fixtures.py [--out fixtures]
"""
import argparse
import json
import random
import unicodedata
from pathlib import Path

ONSETS = ["", "b", "c", "ch", "d", "đ", "g", "gi", "h", "k", "kh", "l", "m", "n", "ng", "nh",
          "ph", "qu", "r", "s", "t", "th", "tr", "v", "x"]
# (rhyme, index of the vowel that carries the tone)
RHYMES = [
    ("a", 0), ("ai", 0), ("am", 0), ("an", 0), ("ang", 0), ("anh", 0), ("ao", 0), ("au", 0),
    ("ay", 0), ("ac", 0), ("at", 0), ("ăm", 0), ("ăn", 0), ("ăng", 0), ("ăt", 0), ("âm", 0),
    ("ân", 0), ("âng", 0), ("ât", 0), ("âu", 0), ("ây", 0), ("e", 0), ("em", 0), ("en", 0),
    ("eo", 0), ("et", 0), ("ê", 0), ("êm", 0), ("ên", 0), ("ênh", 0), ("êu", 0), ("i", 0),
    ("im", 0), ("in", 0), ("inh", 0), ("it", 0), ("iêu", 1), ("iên", 1), ("iêt", 1), ("o", 0),
    ("oi", 0), ("om", 0), ("on", 0), ("ong", 0), ("oc", 0), ("oa", 1), ("oai", 1), ("oan", 1),
    ("ô", 0), ("ôi", 0), ("ôm", 0), ("ôn", 0), ("ông", 0), ("ôt", 0), ("ơ", 0), ("ơi", 0),
    ("ơm", 0), ("ơn", 0), ("u", 0), ("ui", 0), ("um", 0), ("un", 0), ("ung", 0), ("ut", 0),
    ("uô", 1), ("uôi", 1), ("uôn", 1), ("uông", 1), ("ư", 0), ("ưa", 0), ("ưi", 0), ("ưng", 0),
    ("ươi", 1), ("ươn", 1), ("ương", 1), ("ươc", 1), ("y", 0), ("yên", 1),
]
TONES = ["", "̀", "́", "̉", "̃", "̣"]
STOP_TONES = ["́", "̣"]
VOWELS = set("aăâeêioôơuưy")

ENGLISH = """the of and to in is was for that with as on by at from his her they this which be are
have had not but were one all their there been has when who will more if no out so said what up
its about into than them can only other new some could time these two may then do first any my now
such like our over man me even most made after also did many before must through back years where
much your way well down should because each just those people how too little state good very make
world still own see men work long get here between both life being under never day same another
know while last might us great old year off come since against go came right used take three
small water city river house school market garden morning evening light road village family
teacher student music story history language country mountain island forest weather season rain
summer winter spring field farmer fisher boat bridge train station kitchen dinner bread coffee
tea rice fruit flower tree bird dog cat horse child mother father sister brother friend doctor
book letter paper window door table chair street shop price money travel walk read write learn
open close begin finish build grow carry bring share find keep hold speak listen watch think""".split()

INSULTS_VI = ["đồ ngu", "ngu ngốc", "khốn nạn", "đồ vô dụng", "câm mồm"]
INSULTS_EN = ["stupid idiot", "worthless trash", "shut up moron", "pathetic loser"]


def nfc(s):
    return unicodedata.normalize("NFC", s)


def syllable(rng):
    onset = rng.choice(ONSETS)
    rhyme, tone_at = rng.choice(RHYMES)
    stop = rhyme[-1] in "ct" or rhyme.endswith("ch")
    tone = rng.choice(STOP_TONES if stop else TONES)
    vowel_positions = [i for i, ch in enumerate(rhyme) if ch in VOWELS]
    pos = vowel_positions[min(tone_at, len(vowel_positions) - 1)]
    return nfc(onset + rhyme[: pos + 1] + tone + rhyme[pos + 1:])


class MarkovText:
    """Zipfian unigram lexicon plus sparse preferred successors per word."""

    def __init__(self, rng, words, follow=0.75, fanout=6):
        self.rng = rng
        self.words = words
        self.weights = [1.0 / (i + 8) ** 1.05 for i in range(len(words))]
        self.follow = follow
        self.next = {w: rng.choices(words, weights=self.weights, k=fanout) for w in words}

    def sentence(self, n):
        w = self.rng.choices(self.words, weights=self.weights)[0]
        out = [w]
        for _ in range(n - 1):
            if self.rng.random() < self.follow:
                w = self.rng.choice(self.next[w])
            else:
                w = self.rng.choices(self.words, weights=self.weights)[0]
            out.append(w)
        s = " ".join(out)
        return s[0].upper() + s[1:] + "."

    def document(self, sentences):
        return " ".join(self.sentence(self.rng.randint(8, 18)) for _ in range(sentences))


def vietnamese_lexicon(rng, size):
    seen, words = set(), []
    while len(words) < size:
        k = 1 if rng.random() < 0.55 else 2
        w = " ".join(syllable(rng) for _ in range(k))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def garbage(rng):
    pool = "#$%&*+/<=>@^_|~0123456789qzxjwQZXJW§¤±µ¶"
    toks = ["".join(rng.choice(pool) for _ in range(rng.randint(3, 9))) for _ in range(rng.randint(25, 50))]
    return " ".join(toks)


def build_corpus(seed):
    rng = random.Random(seed)
    vi = MarkovText(rng, vietnamese_lexicon(rng, 3500))
    en = MarkovText(rng, ENGLISH, follow=0.7)
    docs = []

    def add(text, source):
        docs.append({"id": f"doc-{len(docs):05d}", "text": nfc(text), "source": source})

    for _ in range(1900):
        add(vi.document(rng.randint(2, 5)), "vi")
    for _ in range(900):
        add(en.document(rng.randint(2, 4)), "en")
    for _ in range(25):
        base = vi.document(2).split(" ")
        cut = rng.randrange(len(base))
        add(" ".join(base[:cut] + [rng.choice(INSULTS_VI)] + base[cut:]) + " " + rng.choice(INSULTS_VI).capitalize() + "!", "vi")
    for _ in range(10):
        add(en.document(2) + " " + rng.choice(INSULTS_EN).capitalize() + "!", "en")
    for _ in range(25):
        add(garbage(rng), "web")

    originals = list(docs)
    for _ in range(60):
        src = rng.choice(originals)
        add(src["text"], src["source"])
    for _ in range(40):
        src = rng.choice([d for d in originals if d["source"] == "vi" and len(d["text"].split()) >= 60])
        words = src["text"].split(" ")
        i = rng.randrange(1, len(words) - 1)
        words[i] = rng.choice(vi.words).split(" ")[0]
        add(" ".join(words), src["source"])
    add("   ", "web")
    add("\n\t", "web")

    order = list(range(len(docs)))
    rng.shuffle(order)
    shuffled = [docs[i] for i in order]
    for i, d in enumerate(shuffled):
        d["id"] = f"doc-{i:05d}"

    # Clean text from the same generators, for the perplexity filter's LM.
    reference = []
    for i in range(400):
        gen = vi if i % 3 else en
        reference.append({"id": f"ref-{i:04d}", "text": nfc(gen.document(rng.randint(2, 5))), "source": "reference"})
    return shuffled, reference


def build_toxicity(seed):
    rng = random.Random(seed)
    vi = MarkovText(rng, vietnamese_lexicon(rng, 1500))
    en = MarkovText(rng, ENGLISH, follow=0.7)
    rows = []
    for i in range(600):
        gen = vi if i % 3 else en
        rows.append((0, gen.document(rng.randint(1, 4))))
        words = gen.document(rng.randint(1, 4)).split(" ")
        for _ in range(rng.randint(1, 2)):
            insult = rng.choice(INSULTS_VI if gen is vi else INSULTS_EN)
            words.insert(rng.randrange(len(words) + 1), insult)
        rows.append((1, " ".join(words)))
    rng.shuffle(rows)
    return rows


SUBJECTS = [
    "stem_elementary_mathematics", "stem_high_school_physics", "stem_computer_network",
    "social_science_sociology", "social_science_macroeconomics", "humanity_logic",
    "humanity_high_school_history", "other_driving_license_certificate", "other_tax_accountant",
]


def build_mcq(seed):
    rng = random.Random(seed)
    lex = vietnamese_lexicon(rng, 400)
    items = []
    for i in range(72):
        subject = SUBJECTS[i % len(SUBJECTS)]
        if subject == "stem_elementary_mathematics":
            a, b = rng.randint(2, 40), rng.randint(2, 40)
            question = f"Kết quả của phép tính {a} + {b} là bao nhiêu?"
            right = str(a + b)
            wrong = set()
            while len(wrong) < 3:
                w = str(a + b + rng.choice([-3, -2, -1, 1, 2, 3, 10]))
                if w != right:
                    wrong.add(w)
            options = [right] + sorted(wrong)
        else:
            question = "Câu nào sau đây đúng về " + " ".join(rng.sample(lex, 3)) + "?"
            options = [" ".join(rng.sample(lex, rng.randint(2, 4))) for _ in range(4)]
            right = options[0]
        rng.shuffle(options)
        labels = "ABCD"
        items.append({
            "id": f"q-{i:03d}",
            "category": subject,
            "question": question,
            "choices": [{"label": labels[k], "text": t} for k, t in enumerate(options)],
            "answer": labels[options.index(right)],
        })
    return items


REFERENCE = """vocab_add,ric,rec
1000,0.841395049,1.01640625
2000,0.630757254,1.04403125
3000,0.584167181,1.073125
4000,0.557951001,1.1025
5000,0.539983642,1.13171875
6000,0.526697283,1.16078125
7000,0.516199365,1.18978125
8000,0.50747301,1.21909375
9000,0.500297369,1.2479375
10000,0.494061494,1.27684375
11000,0.488440053,1.30575
12000,0.483667799,1.33428125
13000,0.479315439,1.36334375
14000,0.475368937,1.39240625
15000,0.471816595,1.42109375
16000,0.468521178,1.4500625
17000,0.465535533,1.4789375
18000,0.462752376,1.50753125
19000,0.460176296,1.5363125
20000,0.45770208,1.5655625
30000,0.439826305,1.85509375
40000,0.422321581,2.14471875
80000,0.403156539,3.31371875
120000,0.395356195,4.49840625
"""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "mini.jsonl", "w", encoding="utf-8", newline="\n") as f:
        corpus, reference = build_corpus(2024)
        for d in corpus:
            f.write(json.dumps(d, ensure_ascii=False) + "\n")
    with open(out / "lm_reference.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for d in reference:
            f.write(json.dumps(d, ensure_ascii=False) + "\n")
    with open(out / "toxicity_train.tsv", "w", encoding="utf-8", newline="\n") as f:
        for label, text in build_toxicity(99):
            f.write(f"{label}\t{text}\n")
    with open(out / "mcq.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for item in build_mcq(5):
            f.write(json.dumps(item, ensure_ascii=False) + "\n")
    (out / "vocab_complexity_reference.csv").write_text(REFERENCE, encoding="utf-8")
    with open(out / "base_corpus.jsonl", "w", encoding="utf-8", newline="\n") as f:
        rng = random.Random(11)
        en = MarkovText(rng, ENGLISH, follow=0.7)
        for i in range(600):
            f.write(json.dumps({"id": f"base-{i:04d}", "text": en.document(3), "source": "en"}) + "\n")


if __name__ == "__main__":
    main()
