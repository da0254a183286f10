"""Interlinear glossed text: records, file formats, vocabularies, task encoding,
genre-based splits and a synthetic corpus generator.

A sentence is stored as words of morphemes with a parallel gloss per morpheme::

    Ti- j- ya' -tq -a'   juntiir
    INC E3S VT  PL  ENF  ADV

and is encoded for token classification as one flat sequence with a
separator between words::

    Ti j ya' tq a' [SEP] juntiir   ->   INC E3S VT PL ENF [SEP] ADV
"""

from __future__ import annotations

import io
import json
import math
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    EmptyCorpus,
    InvalidSpec,
    MalformedRecord,
    MisalignedGloss,
    SequenceTooLong,
    UnassignedGenre,
)

KNOWN_GENRES = ("Story", "History", "Personal", "Advice")

PAD, UNK, MASK, SEP = 0, 1, 2, 3
N_SPECIALS = 4
INPUT_SPECIALS = ("<pad>", "<unk>", "<mask>", "[SEP]")
LABEL_SEP = 0
SEP_TOKEN = "[SEP]"
# Gold glosses missing from the training vocabulary. Never a valid class index,
# so a prediction can never match it.
UNSEEN_LABEL = -1
MAX_SEQ_LEN = 512


def _check_token(tok, line, what):
    if not isinstance(tok, str) or not tok or any(ch.isspace() for ch in tok):
        raise MalformedRecord(line, f"invalid {what} {tok!r}")


@dataclass(frozen=True)
class IgtSentence:
    words: tuple
    glosses: tuple
    translation: str | None = None
    genre: str = "Other"
    speaker_id: str = ""
    doc_id: str = ""
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(tuple(w) for w in self.words))
        object.__setattr__(self, "glosses", tuple(tuple(g) for g in self.glosses))
        self.validate()

    def validate(self, line=None):
        if len(self.words) != len(self.glosses):
            raise MisalignedGloss(line, f"{len(self.words)} words but {len(self.glosses)} gloss groups")
        for w, g in zip(self.words, self.glosses):
            if len(w) != len(g):
                raise MisalignedGloss(line, f"word {list(w)} has {len(w)} morphemes but {len(g)} glosses")
            if not w:
                raise MalformedRecord(line, "empty word")
            for m in w:
                _check_token(m, line, "morpheme")
            for x in g:
                _check_token(x, line, "gloss")
        if not self.words:
            raise MalformedRecord(line, "sentence has no words")
        if not self.genre:
            raise MalformedRecord(line, "genre is required")

    @property
    def key(self):
        """Sentence identity used for split disjointness."""
        return (self.doc_id, self.index)

    @property
    def morphemes(self):
        return [m for w in self.words for m in w]

    @property
    def flat_glosses(self):
        return [g for w in self.glosses for g in w]

    @property
    def n_morphemes(self):
        return sum(len(w) for w in self.words)


# ---------------------------------------------------------------------------
# file formats


def _sentence_from_record(rec, line, doc_counter):
    if not isinstance(rec, dict):
        raise MalformedRecord(line, "record is not a JSON object")
    for key in ("transcription", "glosses"):
        if key not in rec:
            raise MalformedRecord(line, f"missing field {key!r}")
    words, glosses = rec["transcription"], rec["glosses"]
    for name, val in (("transcription", words), ("glosses", glosses)):
        if not isinstance(val, list) or not all(isinstance(w, list) for w in val):
            raise MalformedRecord(line, f"{name} must be a list of lists")
    translation = rec.get("translation")
    if translation is not None and not isinstance(translation, str):
        raise MalformedRecord(line, "translation must be a string")
    genre = rec.get("genre", "Other")
    doc = str(rec.get("doc", ""))
    idx = doc_counter.get(doc, 0)
    doc_counter[doc] = idx + 1
    try:
        s = IgtSentence(words, glosses, translation, str(genre), str(rec.get("speaker", "")), doc, idx)
    except (MisalignedGloss, MalformedRecord) as exc:
        raise type(exc)(line, exc.reason) from None
    except TypeError as exc:
        raise MalformedRecord(line, str(exc)) from None
    return s


def _parse_jsonl(lines):
    out, counter = [], {}
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(lineno, exc.msg) from None
        out.append(_sentence_from_record(rec, lineno, counter))
    return out


def _parse_twoline(lines, genre, doc, speaker):
    out, block, start = [], [], None
    counter = {}

    def flush():
        if not block:
            return
        if len(block) not in (2, 3):
            raise MalformedRecord(start, f"expected morpheme and gloss lines, got {len(block)} lines")
        mwords = [w.split("-") for w in block[0].split()]
        gwords = [w.split("-") for w in block[1].split()]
        # strip empty pieces left by leading/trailing hyphens ("Ti-", "-tq")
        mwords = [[m for m in w if m] for w in mwords]
        gwords = [[g for g in w if g] for w in gwords]
        rec = {"transcription": mwords, "glosses": gwords,
               "translation": block[2].strip() if len(block) == 3 else None,
               "genre": genre, "doc": doc, "speaker": speaker}
        out.append(_sentence_from_record(rec, start, counter))

    for lineno, raw in enumerate(lines, start=1):
        if raw.strip():
            if not block:
                start = lineno
            block.append(raw.rstrip("\n"))
        else:
            flush()
            block = []
    flush()
    return out


def parse_corpus(stream, format="jsonl", *, genre="Other", doc="doc", speaker=""):
    """Parse a corpus from a text stream, a string, or bytes.

    ``format`` is ``"jsonl"`` (canonical) or ``"twoline"``. The TwoLine format
    has no metadata, so ``genre``/``doc``/``speaker`` are applied to every
    record. Raises ``MisalignedGloss`` or ``MalformedRecord`` with the 1-based
    line number of the offending record.
    """
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = list(stream)
    fmt = format.lower()
    if fmt == "jsonl":
        return _parse_jsonl(lines)
    if fmt in ("twoline", "two_line", "two-line"):
        return _parse_twoline(lines, genre, doc, speaker)
    raise ConfigError(f"unknown corpus format {format!r}")


def sentence_to_record(s):
    rec = {"transcription": [list(w) for w in s.words],
           "glosses": [list(g) for g in s.glosses]}
    if s.translation is not None:
        rec["translation"] = s.translation
    rec["genre"] = s.genre
    rec["speaker"] = s.speaker_id
    rec["doc"] = s.doc_id
    return rec


def serialize_corpus(sentences):
    """Canonical JSONL text (UTF-8 safe, LF endings)."""
    return "".join(json.dumps(sentence_to_record(s), ensure_ascii=False) + "\n" for s in sentences)


def normalize_jsonl(text):
    """Canonical form of a JSONL corpus text, computed without building sentences."""
    order = ("transcription", "glosses", "translation", "genre", "speaker", "doc")
    out = []
    for raw in io.StringIO(text):
        if not raw.strip():
            continue
        rec = json.loads(raw)
        rec.setdefault("genre", "Other")
        rec["speaker"] = str(rec.get("speaker", ""))
        rec["doc"] = str(rec.get("doc", ""))
        if rec.get("translation") is None:
            rec.pop("translation", None)
        out.append(json.dumps({k: rec[k] for k in order if k in rec}, ensure_ascii=False) + "\n")
    return "".join(out)


def read_corpus(path, format="jsonl", **kw):
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, format, **kw)


def write_corpus(path, sentences):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_corpus(sentences))


# ---------------------------------------------------------------------------
# vocabulary and task encoding


@dataclass(frozen=True)
class Vocabulary:
    id_to_morpheme: tuple
    id_to_gloss: tuple
    morpheme_to_id: dict = field(repr=False, compare=False, default=None)
    gloss_to_id: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.id_to_morpheme[:N_SPECIALS] != INPUT_SPECIALS or self.id_to_gloss[:1] != (SEP_TOKEN,):
            raise ConfigError("vocabulary specials are not in their reserved slots")
        m2i = {m: i for i, m in enumerate(self.id_to_morpheme)}
        g2i = {g: i for i, g in enumerate(self.id_to_gloss)}
        if len(m2i) != len(self.id_to_morpheme) or len(g2i) != len(self.id_to_gloss):
            raise ConfigError("vocabulary contains duplicate entries")
        object.__setattr__(self, "morpheme_to_id", m2i)
        object.__setattr__(self, "gloss_to_id", g2i)

    @property
    def input_size(self):
        return len(self.id_to_morpheme)

    @property
    def label_size(self):
        return len(self.id_to_gloss)

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(json.dumps([self.id_to_morpheme, self.id_to_gloss], ensure_ascii=False).encode())
        return h.hexdigest()[:16]

    def to_json(self):
        return {"morphemes": list(self.id_to_morpheme), "glosses": list(self.id_to_gloss)}

    @classmethod
    def from_json(cls, obj):
        return cls(tuple(obj["morphemes"]), tuple(obj["glosses"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def build_vocab(train):
    """Vocabulary over the training split; ids by first occurrence after the specials."""
    if not train:
        raise EmptyCorpus("cannot build a vocabulary from an empty training set")
    morphs, glosses = dict.fromkeys(INPUT_SPECIALS), dict.fromkeys([SEP_TOKEN])
    for s in train:
        for w, g in zip(s.words, s.glosses):
            morphs.update(dict.fromkeys(w))
            glosses.update(dict.fromkeys(g))
    return Vocabulary(tuple(morphs), tuple(glosses))


@dataclass(frozen=True)
class EncodedSentence:
    input_ids: tuple
    label_ids: tuple
    oov_mask: tuple
    source: IgtSentence | None = field(default=None, compare=False, repr=False)

    def __len__(self):
        return len(self.input_ids)


def to_task_sequence(s, v):
    """Encode one sentence as a flat morpheme sequence with SEP between words."""
    inp, lab, oov = [], [], []
    for wi, (w, g) in enumerate(zip(s.words, s.glosses)):
        if wi:
            inp.append(SEP)
            lab.append(LABEL_SEP)
            oov.append(False)
        for m, x in zip(w, g):
            mid = v.morpheme_to_id.get(m, UNK)
            inp.append(mid)
            oov.append(mid == UNK)
            lab.append(v.gloss_to_id.get(x, UNSEEN_LABEL))
    if len(inp) > MAX_SEQ_LEN:
        raise SequenceTooLong(f"sentence {s.key} has {len(inp)} positions (max {MAX_SEQ_LEN})")
    return EncodedSentence(tuple(inp), tuple(lab), tuple(oov), s)


def encode_corpus(sentences, v):
    return [to_task_sequence(s, v) for s in sentences]


def decode(e, v):
    """Inverse of ``to_task_sequence`` on the input side: words of morpheme strings."""
    words, cur = [], []
    for i in e.input_ids:
        if i == SEP:
            words.append(cur)
            cur = []
        else:
            cur.append(v.id_to_morpheme[i])
    words.append(cur)
    return words


def decode_labels(ids, v):
    return [SEP_TOKEN if i == LABEL_SEP else (v.id_to_gloss[i] if i >= 0 else "<unseen>") for i in ids]


# ---------------------------------------------------------------------------
# genre splits


@dataclass(frozen=True)
class Splits:
    train: list
    eval_id: list
    eval_ood: list
    test_ood: list

    def as_dict(self):
        return {"train": self.train, "eval_id": self.eval_id,
                "eval_ood": self.eval_ood, "test_ood": self.test_ood}


def _cut(items, frac, rng, policy):
    if not items:
        return [], []
    if policy == "sentence":
        order = rng.permutation(len(items))
        n_first = int(round(frac * len(items)))
        first = sorted(order[:n_first])
        second = sorted(order[n_first:])
        return [items[i] for i in first], [items[i] for i in second]
    if policy == "document":
        docs = list(dict.fromkeys(s.doc_id for s in items))
        target = frac * len(items)
        sizes = {d: 0 for d in docs}
        for s in items:
            sizes[s.doc_id] += 1
        chosen, total = set(), 0
        for di in rng.permutation(len(docs)):
            d = docs[di]
            if total >= target:
                break
            chosen.add(d)
            total += sizes[d]
        return ([s for s in items if s.doc_id in chosen],
                [s for s in items if s.doc_id not in chosen])
    raise ConfigError(f"unknown split policy {policy!r}")


def split_by_genre(corpus, id_genres, ood_genres, ratios=(0.7, 0.5), seed=0, policy="sentence"):
    """Partition a corpus into train / eval_id (ID genres) and eval_ood / test_ood.

    ``ratios`` is ``(train_frac, ood_eval_frac)``: the share of ID sentences
    used for training, and the share of OOD sentences used for OOD evaluation.
    ``policy`` is ``"sentence"`` (default) or ``"document"`` (whole documents
    stay together).
    """
    id_genres, ood_genres = set(id_genres), set(ood_genres)
    if id_genres & ood_genres:
        raise ConfigError(f"genres on both sides: {sorted(id_genres & ood_genres)}")
    train_frac, ood_frac = ratios
    for r in ratios:
        if not 0 < r < 1:
            raise ConfigError(f"split ratios must lie in (0, 1), got {ratios}")
    id_part, ood_part = [], []
    for s in corpus:
        if s.genre in id_genres:
            id_part.append(s)
        elif s.genre in ood_genres:
            ood_part.append(s)
        else:
            raise UnassignedGenre(s.genre)
    keys = [s.key for s in corpus]
    if len(set(keys)) != len(keys):
        raise ConfigError("duplicate sentence identities (doc_id, index) in corpus")
    rng = np.random.default_rng(seed)
    train, eval_id = _cut(id_part, train_frac, rng, policy)
    eval_ood, test_ood = _cut(ood_part, ood_frac, rng, policy)
    return Splits(train, eval_id, eval_ood, test_ood)


# ---------------------------------------------------------------------------
# synthetic corpus

_PERSONS = ("1S", "2S", "3S", "1P", "2P", "3P")

_DEFAULT_PERSON_WEIGHTS = {
    "Story": [0.05, 0.05, 0.6, 0.05, 0.05, 0.2],
    "History": [0.05, 0.05, 0.55, 0.05, 0.05, 0.25],
    "Personal": [0.45, 0.05, 0.2, 0.2, 0.05, 0.05],
    "Advice": [0.05, 0.45, 0.2, 0.05, 0.2, 0.05],
}

# word type -> probability in the base mix
_WORD_MIX = {"VT": 0.25, "VI": 0.2, "S": 0.35, "ADV": 0.1, "PART": 0.1}
_P_POSS = 0.5      # optional possessor on unambiguous nouns
_P_NOUN_PL = 0.3   # optional plural on nouns
_OPEN_CLASSES = ("VT", "VI", "S", "ADV")
_CLOSED = {"PREP": 5, "CONJ": 3, "EXS": 1}


@dataclass
class ToySpec:
    """Parameters of the stochastic template grammar.

    Words follow fixed templates whose gloss sequences are regular:

    * transitive verb:   ASP  E-person  VT  status   (status is a function of ASP)
    * intransitive verb: ASP  A-person  VI  [PL]     (PL iff the person is plural)
    * noun:              [E-person]  S  [PL]
    * adverb / particle: single stem

    ``ambiguity_rate`` is the expected fraction of morpheme tokens whose
    surface form is shared by a VT and an S stem (each reading equally
    likely); the status suffix to the right disambiguates.
    ``ood_vocab_shift`` is the expected fraction of morpheme tokens in OOD
    genre sentences drawn from a stem pool never used by ID genres.
    """

    n_sentences: int = 3000
    genre_weights: dict = field(default_factory=lambda: {"Story": 0.3, "History": 0.3, "Personal": 0.2, "Advice": 0.2})
    ood_genres: list = field(default_factory=lambda: ["Personal", "Advice"])
    person_weights: dict = field(default_factory=lambda: {k: list(v) for k, v in _DEFAULT_PERSON_WEIGHTS.items()})
    words_per_sentence: tuple = (2, 5)
    stems_per_class: int = 40
    ood_stems_per_class: int = 40
    n_ambiguous_stems: int = 20
    zipf_exponent: float = 0.0
    ambiguity_rate: float = 0.0
    ood_vocab_shift: float = 0.0
    docs_per_genre: int = 6
    n_speakers: int = 17

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown toy spec fields: {sorted(unknown)}")
        d = dict(d)
        if "words_per_sentence" in d:
            d["words_per_sentence"] = tuple(d["words_per_sentence"])
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["words_per_sentence"] = list(self.words_per_sentence)
        return d


def _plural_prob(spec, genres):
    ws = [(spec.genre_weights.get(g, 0.0), g) for g in genres]
    tot = sum(w for w, _ in ws)
    if tot <= 0:
        return 0.5
    p = 0.0
    for w, g in ws:
        pw = np.asarray(spec.person_weights.get(g, [1.0] * 6), dtype=float)
        p += w / tot * pw[3:].sum() / pw.sum()
    return p


def _word_stats(p_plural):
    """Expected morphemes per word type and per word, and open-class stems per word."""
    m = {"VT": 4.0, "VI": 3.0 + p_plural, "S": 1.0 + _P_POSS + _P_NOUN_PL, "ADV": 1.0, "PART": 1.0}
    mean_m = sum(_WORD_MIX[k] * m[k] for k in _WORD_MIX)
    open_stems = sum(_WORD_MIX[k] for k in _OPEN_CLASSES)
    return m, mean_m, open_stems


def _check_spec(spec):
    if spec.n_sentences < 1:
        raise InvalidSpec("n_sentences must be positive")
    lo, hi = spec.words_per_sentence
    if not 1 <= lo <= hi:
        raise InvalidSpec("words_per_sentence must satisfy 1 <= min <= max")
    if not spec.genre_weights or any(w < 0 for w in spec.genre_weights.values()) \
            or sum(spec.genre_weights.values()) <= 0:
        raise InvalidSpec("genre_weights must be non-negative and not all zero")
    for g in spec.genre_weights:
        pw = spec.person_weights.get(g, [1.0] * 6)
        if len(pw) != 6 or any(w < 0 for w in pw) or sum(pw) <= 0:
            raise InvalidSpec(f"person_weights for {g!r} must be 6 non-negative weights")
    for name in ("ambiguity_rate", "ood_vocab_shift"):
        r = getattr(spec, name)
        if not 0 <= r < 1:
            raise InvalidSpec(f"{name} must lie in [0, 1)")
    if min(spec.stems_per_class, spec.ood_stems_per_class, spec.docs_per_genre, spec.n_speakers) < 1:
        raise InvalidSpec("pool, document and speaker counts must be positive")
    if spec.ambiguity_rate > 0 and spec.n_ambiguous_stems < 1:
        raise InvalidSpec("ambiguity_rate > 0 needs n_ambiguous_stems >= 1")


def _ambiguous_word_prob(r, m, b):
    # one ambiguous token per ambiguous word: p / (p*a + (1-p)*b) == r
    a = 0.5 * m["VT"] + 0.5 * (1.0 + 1.0 + _P_NOUN_PL)
    return r * b / (1.0 - r * a + r * b) if r > 0 else 0.0, a


def _mixing_probs(spec):
    """Per-word probability of an ambiguous stem, and per-open-stem probability
    of an OOD-pool stem, chosen so the token-level rates hit the requested targets."""
    m, b, _ = _word_stats(_plural_prob(spec, list(spec.genre_weights)))
    p_amb, _ = _ambiguous_word_prob(spec.ambiguity_rate, m, b)
    if not 0 <= p_amb <= 1:
        raise InvalidSpec(f"ambiguity_rate {spec.ambiguity_rate} is not reachable with this grammar")
    q = 0.0
    if spec.ood_vocab_shift > 0:
        m, b, open_stems = _word_stats(_plural_prob(spec, spec.ood_genres))
        p_ood, a = _ambiguous_word_prob(spec.ambiguity_rate, m, b)
        mean_m = p_ood * a + (1 - p_ood) * b
        q = spec.ood_vocab_shift * mean_m / ((1 - p_amb) * open_stems)
        if q > 1:
            raise InvalidSpec(f"ood_vocab_shift {spec.ood_vocab_shift} is not reachable with this grammar")
    return p_amb, q


class _Lexicon:
    """Surface forms for every morpheme class, unique across the whole grammar."""

    ONSETS = ["", "b", "ch", "j", "k", "k'", "l", "m", "n", "p", "q", "r", "s", "t", "tz", "w", "x", "y"]
    NUCLEI = ["a", "e", "i", "o", "u", "aa", "ii", "oo"]
    CODAS = ["", "", "b", "j", "k", "l", "m", "n", "q", "r", "s", "t", "'"]

    def __init__(self, spec, rng):
        self.rng = rng
        self.used = set()
        self.asp = {"INC": "ti", "COM": "x"}
        self.status = {"INC": "j", "COM": "oom"}
        self.erg = dict(zip(_PERSONS, ["in", "a", "r", "qa", "e", "k"]))
        self.abs = dict(zip(_PERSONS, ["nn", "at", "ch", "oq", "ix", "eb"]))
        self.pl = {"VI": "taq", "S": "iib"}
        closed = {"PREP": ["chi", "pa", "rk'in", "ruk'", "chuwa"], "CONJ": ["ar", "pero", "ruuk"], "EXS": ["wi"]}
        for s in (*self.asp.values(), *self.status.values(), *self.erg.values(),
                  *self.abs.values(), *self.pl.values(), *(x for v in closed.values() for x in v)):
            self.used.add(s)
        self.closed = closed
        self.stems = {c: [self._fresh() for _ in range(spec.stems_per_class)] for c in _OPEN_CLASSES}
        self.ood_stems = {c: [self._fresh() for _ in range(spec.ood_stems_per_class)] for c in _OPEN_CLASSES}
        self.ambiguous = [self._fresh() for _ in range(spec.n_ambiguous_stems)]

    def _fresh(self):
        r = self.rng
        while True:
            n = 1 + int(r.integers(0, 3))
            s = "".join(self.ONSETS[r.integers(len(self.ONSETS))] + self.NUCLEI[r.integers(len(self.NUCLEI))]
                        + self.CODAS[r.integers(len(self.CODAS))] for _ in range(n))
            if len(s) >= 2 and s not in self.used:
                self.used.add(s)
                return s


def _zipf_weights(n, s):
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def generate_toy_corpus(spec, seed=0):
    """Sample a corpus from the template grammar described by ``spec``."""
    if isinstance(spec, dict):
        spec = ToySpec.from_dict(spec)
    _check_spec(spec)
    p_amb, q_ood = _mixing_probs(spec)
    rng = np.random.default_rng(seed)
    lex = _Lexicon(spec, rng)
    genres = list(spec.genre_weights)
    gw = np.array([spec.genre_weights[g] for g in genres], dtype=float)
    gw /= gw.sum()
    pools_w = {c: _zipf_weights(len(lex.stems[c]), spec.zipf_exponent) for c in _OPEN_CLASSES}
    ood_w = {c: _zipf_weights(len(lex.ood_stems[c]), spec.zipf_exponent) for c in _OPEN_CLASSES}
    amb_w = _zipf_weights(len(lex.ambiguous), spec.zipf_exponent) if lex.ambiguous else None
    word_types = list(_WORD_MIX)
    word_p = np.array([_WORD_MIX[k] for k in word_types])
    ood_set = set(spec.ood_genres)
    doc_speaker = {}
    doc_count = {}

    def person(genre):
        pw = np.asarray(spec.person_weights.get(genre, [1.0] * 6), dtype=float)
        return _PERSONS[rng.choice(6, p=pw / pw.sum())]

    def stem(cls, genre):
        if genre in ood_set and q_ood > 0 and rng.random() < q_ood:
            pool, w = lex.ood_stems[cls], ood_w[cls]
        else:
            pool, w = lex.stems[cls], pools_w[cls]
        return pool[rng.choice(len(pool), p=w)]

    def verb_t(genre, st):
        asp = "INC" if rng.random() < 0.6 else "COM"
        p = person(genre)
        return ([lex.asp[asp], lex.erg[p], st, lex.status[asp]], [asp, "E" + p, "VT", "SC" if asp == "INC" else "PRF"])

    def noun(genre, st, poss):
        ms, gs = [], []
        if poss:
            p = person(genre)
            ms.append(lex.erg[p])
            gs.append("E" + p)
        ms.append(st)
        gs.append("S")
        if rng.random() < _P_NOUN_PL:
            ms.append(lex.pl["S"])
            gs.append("PL")
        return ms, gs

    def word(genre):
        if p_amb > 0 and rng.random() < p_amb:
            st = lex.ambiguous[rng.choice(len(lex.ambiguous), p=amb_w)]
            if rng.random() < 0.5:
                return verb_t(genre, st)
            return noun(genre, st, poss=True)
        kind = word_types[rng.choice(len(word_types), p=word_p)]
        if kind == "VT":
            return verb_t(genre, stem("VT", genre))
        if kind == "VI":
            asp = "INC" if rng.random() < 0.6 else "COM"
            p = person(genre)
            ms = [lex.asp[asp], lex.abs[p], stem("VI", genre)]
            gs = [asp, "A" + p, "VI"]
            if p.endswith("P"):
                ms.append(lex.pl["VI"])
                gs.append("PL")
            return ms, gs
        if kind == "S":
            return noun(genre, stem("S", genre), poss=rng.random() < _P_POSS)
        if kind == "ADV":
            return [stem("ADV", genre)], ["ADV"]
        cls = ("PREP", "CONJ", "EXS")[rng.choice(3)]
        forms = lex.closed[cls]
        return [forms[rng.integers(len(forms))]], [cls]

    out = []
    lo, hi = spec.words_per_sentence
    for _ in range(spec.n_sentences):
        genre = genres[rng.choice(len(genres), p=gw)]
        d = int(rng.integers(spec.docs_per_genre))
        doc = f"{genre.lower()}-{d:02d}"
        if doc not in doc_speaker:
            doc_speaker[doc] = f"spk{int(rng.integers(spec.n_speakers)):02d}"
        idx = doc_count.get(doc, 0)
        doc_count[doc] = idx + 1
        n_words = int(rng.integers(lo, hi + 1))
        ws, gs = zip(*(word(genre) for _ in range(n_words)))
        out.append(IgtSentence(ws, gs, None, genre, doc_speaker[doc], doc, idx))
    return out


def corpus_stats(sentences):
    n_tok = sum(s.n_morphemes for s in sentences)
    genres = {}
    for s in sentences:
        genres[s.genre] = genres.get(s.genre, 0) + 1
    return {"sentences": len(sentences), "morphemes": n_tok, "genres": genres,
            "mean_morphemes": n_tok / len(sentences) if sentences else math.nan}
