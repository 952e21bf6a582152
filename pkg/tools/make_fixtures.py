"""Regenerate the synthetic bilingual fixtures under fixtures/.

Deterministic: rerunning produces byte-identical files. Texts are unique
after cleaning across every file, except for a few deliberate
cross-source Arabic duplicates that exercise deduplication.
"""

import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from miniens.data import dedup_key  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "fixtures"

EN = {
    "subjects": ["I", "We", "My friend", "Everyone", "She", "They", "My brother", "The whole team"],
    "phrases": {
        "positive": ["really love", "am so happy with", "enjoyed", "think great things about", "adore", "am thrilled by"],
        "negative": ["really hate", "am so angry about", "regret", "think terrible things about", "despise", "am disappointed by"],
        "neutral": ["am watching", "read about", "talked about", "am heading to", "have a meeting on", "saw the schedule for"],
    },
    "topics": ["the new phone", "this movie", "the game tonight", "my coffee", "the concert", "the update",
               "the weather", "the election debate", "the train", "the album", "the museum", "the final exam"],
    "tails": {
        "positive": ["best day ever", "so good", "amazing", "love it"],
        "negative": ["worst day ever", "so bad", "awful", "hate it"],
        "neutral": ["at noon", "on monday", "later today", "this week"],
    },
}

AR = {
    "subjects": ["أنا", "نحن", "صديقي", "الجميع", "هي", "هم", "أخي", "الفريق كله"],
    "phrases": {
        "positive": ["أحب", "سعيد جدا ب", "استمتعت ب", "معجب ب", "أعشق", "فخور ب"],
        "negative": ["أكره", "غاضب من", "نادم على", "منزعج من", "أمقت", "محبط من"],
        "neutral": ["أشاهد", "قرأت عن", "تحدثنا عن", "ذاهب إلى", "لدينا اجتماع عن", "رأيت جدول"],
    },
    "topics": ["الفيلم", "المباراة", "الهاتف الجديد", "القهوة", "الحفلة", "التحديث",
               "الطقس", "المناظرة", "القطار", "الألبوم", "المتحف", "الامتحان"],
    "tails": {
        "positive": ["أفضل يوم", "رائع جدا", "جميل", "ممتاز"],
        "negative": ["أسوأ يوم", "سيء جدا", "فظيع", "مقرف"],
        "neutral": ["الساعة الثانية", "يوم الاثنين", "اليوم", "هذا الأسبوع"],
    },
    "objective": ["خبر عاجل عن", "تقرير رسمي حول", "بيان صحفي بشأن", "إعلان عن"],
}

NOISE = ["", "", "", " https://t.co/{n}x", " @user_{n}", " #tag{n}", " 😀", " !!", " www.site{n}.com", " ..."]
AR_NOISE = ["", "", "", " https://t.co/{n}a", " @user_{n}", " #مصر", " 🙂", " ؟", " !!", " ..."]
LABELS = ("positive", "negative", "neutral")


class Generator:
    def __init__(self, seed):
        self.rng = random.Random(seed)
        self.seen = set()
        self.n = 0

    def sentence(self, lex, label, noise):
        for _ in range(1000):
            self.n += 1
            subj = self.rng.choice(lex["subjects"])
            phrase = self.rng.choice(lex["phrases"][label])
            topic = self.rng.choice(lex["topics"])
            tail = self.rng.choice(lex["tails"][label])
            extra = self.rng.choice(noise).format(n=self.n)
            text = f"{subj} {phrase} {topic} {tail}{extra}"
            key = dedup_key(text)
            if key not in self.seen:
                self.seen.add(key)
                return text
        raise RuntimeError("lexicon exhausted")

    def objective(self, lex):
        for _ in range(1000):
            self.n += 1
            text = f"{self.rng.choice(lex['objective'])} {self.rng.choice(lex['topics'])} {self.n}"
            if dedup_key(text) not in self.seen:
                self.seen.add(dedup_key(text))
                return text
        raise RuntimeError("lexicon exhausted")

    def labels(self, count):
        out = [LABELS[i % 3] for i in range(count)]
        self.rng.shuffle(out)
        return out


def semeval_rows(gen, lex, noise, count, prefix):
    rows = []
    for i, label in enumerate(gen.labels(count)):
        rows.append((f"{prefix}{i:04d}", label, gen.sentence(lex, label, noise)))
    return rows


def write_semeval(name, rows):
    with (OUT / name).open("w", encoding="utf-8", newline="\n") as fh:
        for ident, label, text in rows:
            fh.write(f"{ident}\t{label}\t{text}\n")


def main():
    OUT.mkdir(exist_ok=True)
    gen = Generator(2017)

    english = {
        "en/twitter-2013train.tsv": (30, "13tr"),
        "en/twitter-2014train.tsv": (30, "14tr"),
        "en/twitter-2015train.tsv": (30, "15tr"),
        "en/twitter-2016train.tsv": (30, "16tr"),
        "en/twitter-2013test.tsv": (20, "13te"),
        "en/twitter-2014test.tsv": (20, "14te"),
        "en/twitter-2017test.tsv": (40, "17te"),
    }
    (OUT / "en").mkdir(exist_ok=True)
    for name, (count, prefix) in english.items():
        write_semeval(name, semeval_rows(gen, EN, NOISE, count, prefix))

    (OUT / "ar").mkdir(exist_ok=True)
    semeval_ar = {}
    for sub in ("A", "B", "D"):
        rows = semeval_rows(gen, AR, AR_NOISE, 25, f"ar{sub}")
        semeval_ar[sub] = rows
        write_semeval(f"ar/semeval2017-task4{sub}-train.tsv", rows)
    write_semeval("ar/semeval2017-task4A-test.tsv", semeval_rows(gen, AR, AR_NOISE, 50, "arte"))

    # ASTD: 75 sentiment rows, 25 objective rows, plus 3 rows that repeat
    # SemEval subtask A texts with extra punctuation (removed by dedup).
    astd = [(gen.sentence(AR, label, AR_NOISE), {"positive": "POS", "negative": "NEG", "neutral": "NEUTRAL"}[label])
            for label in gen.labels(72)]
    astd += [(gen.objective(AR), "OBJ") for _ in range(25)]
    astd += [(text + " !!!", {"positive": "POS", "negative": "NEG", "neutral": "NEUTRAL"}[label])
             for _, label, text in semeval_ar["A"][:3]]
    gen.rng.shuffle(astd)
    with (OUT / "ar" / "astd.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for text, label in astd:
            fh.write(f"{text}\t{label}\n")

    # small balanced English set for overfitting checks
    write_semeval("overfit-32.tsv", semeval_rows(Generator(32), EN, NOISE, 32, "of"))


if __name__ == "__main__":
    main()
