"""Term lists: sex-specific exclusion stems and gendered wording.

Two different assets live here and must not be confused:

* :class:`GenderLexicon` holds exclusion stems. A record whose text contains
  one of them describes sex-specific medicine (pregnancy, prostate...) and
  cannot be turned into a meaningful counterfactual.
* :class:`GenderedTerms` holds whole-word pronouns, nouns, honorifics and
  agreement markers in male/female pairs. The counterfactual validator uses
  it to check that a rewrite actually flipped the wording.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .core import ConfigError, Sex

# Stems are matched as case-insensitive substrings, not words: "uter"
# deliberately catches "utérus", "utérin", "uterine" (and some false hits).
FR_STEMS: dict[str, tuple[str, ...]] = {
    "female_anatomy": ("uter", "utér", "ovair", "ovarien", "vagin", "vulv", "mamma", "fallope"),
    "male_anatomy": ("prostat", "testicul", "peni", "pénien", "scrot", "séminale"),
    "pregnancy": ("grossesse", "enceinte", "fausse couche", "ivg", "curetage"),
    "female_conditions": ("menopause", "ménorrhée", "règles", "endométriose", "endometriose"),
    "male_conditions": ("andropause",),
    "procedures": ("hystérectomie", "hysterectomie", "ligature trompes", "cesarienne", "cezarienne"),
    "specialties": ("Gyné", "Obsté", "gyneco", "obste"),
    "neoplasms": ("cancer du sein", "K sein"),
}

EN_STEMS: dict[str, tuple[str, ...]] = {
    "female_anatomy": ("uter", "uterin", "ovar", "ovarian", "vagin", "vulv", "mammar", "fallop"),
    "male_anatomy": ("prostat", "testic", "penil", "scrot", "seminal"),
    "pregnancy": ("pregnan", "miscarr", "abortion", "curettage"),
    "female_conditions": ("menopaus", "menstruat", "menses", "endometrios"),
    "male_conditions": ("andropaus",),
    "procedures": ("hysterectom", "tubal ligation", "cesare", "c-section"),
    "specialties": ("gyneco", "obstet", "ob/gyn"),
    "neoplasms": ("ovarian cancer", "prostate cancer"),
}

# Categorical chief-complaint classes removed before any text screening.
EXCLUDED_CHIEF_COMPLAINTS = (
    "Recent pelvic or genital pain",
    "Female/male urogenital problem without pain",
    "Female/male genital bleeding",
    "Foreign body in the genitourinary tract",
)


@dataclass(frozen=True)
class GenderLexicon:
    language: str
    stems: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        if self.language not in ("fr", "en"):
            raise ConfigError(f"unsupported lexicon language {self.language!r}")
        stems = {cat: tuple(s) for cat, s in self.stems.items()}
        if not any(stems.values()):
            raise ConfigError("lexicon is empty")
        for cat, group in stems.items():
            if any(not s or not s.strip() for s in group):
                raise ConfigError(f"empty stem in category {cat!r}")
        object.__setattr__(self, "stems", stems)

    @property
    def all_stems(self) -> tuple[str, ...]:
        return tuple(s for group in self.stems.values() for s in group)

    def find(self, text: str) -> list[str]:
        """Stems occurring in ``text``, in lexicon order."""
        if not text:
            return []
        folded = text.casefold()
        return [s for s in self.all_stems if s.casefold() in folded]

    def to_dict(self) -> dict:
        return {"language": self.language, "stems": {k: list(v) for k, v in self.stems.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GenderLexicon":
        return cls(d["language"], {k: tuple(v) for k, v in d["stems"].items()})


def default_lexicon(language: str) -> GenderLexicon:
    if language == "fr":
        return GenderLexicon("fr", FR_STEMS)
    if language == "en":
        return GenderLexicon("en", EN_STEMS)
    raise ConfigError(f"no default lexicon for language {language!r}")


def matches_lexicon(text: str, lexicon: GenderLexicon) -> tuple[bool, list[str]]:
    hits = lexicon.find(text)
    return bool(hits), hits


# Gendered wording ------------------------------------------------------------

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.casefold()) if text else []


# (male, female) pairs describing the patient; only membership of each side
# matters. Kinship words for relatives (son, mother...) are absent on purpose:
# a relative keeps their sex when the patient's is flipped. Spouse and partner
# words are gendered by the partner, not the patient, so a rewrite may or may
# not flip them; they are listed separately and ignored by the validator.
# French agreement markers are limited to participles and adjectives that
# almost always qualify the patient ("connue" often agrees with a disease).
_FR_PAIRS = [
    ("il", "elle"), ("ils", "elles"), ("patient", "patiente"), ("homme", "femme"),
    ("monsieur", "madame"), ("mr", "mme"), ("veuf", "veuve"), ("né", "née"), ("âgé", "âgée"), ("agé", "agée"),
    ("hospitalisé", "hospitalisée"), ("adressé", "adressée"), ("amené", "amenée"),
    ("tombé", "tombée"), ("retrouvé", "retrouvée"), ("transporté", "transportée"),
    ("orienté", "orientée"), ("désorienté", "désorientée"), ("conscient", "consciente"),
    ("inconscient", "inconsciente"), ("allongé", "allongée"), ("venu", "venue"),
    ("admis", "admise"), ("vacciné", "vaccinée"), ("fatigué", "fatiguée"),
    ("inquiet", "inquiète"), ("angoissé", "angoissée"), ("stressé", "stressée"),
    ("alcoolisé", "alcoolisée"), ("agité", "agitée"), ("confus", "confuse"),
    ("marié", "mariée"), ("divorcé", "divorcée"), ("retraité", "retraitée"),
    ("blessé", "blessée"), ("intubé", "intubée"), ("perfusé", "perfusée"),
    ("sportif", "sportive"), ("installé", "installée"), ("réveillé", "réveillée"),
    ("essoufflé", "essoufflée"), ("soulagé", "soulagée"),
]

_EN_PAIRS = [
    ("he", "she"), ("him", "her"), ("his", "her"), ("his", "hers"),
    ("himself", "herself"), ("man", "woman"), ("men", "women"), ("male", "female"),
    ("gentleman", "lady"), ("gentlemen", "ladies"), ("boy", "girl"), ("mr", "mrs"),
    ("mr", "ms"), ("sir", "madam"), ("widower", "widow"), ("males", "females"),
]

_FR_PARTNERS = ("mari", "épouse", "époux", "conjoint", "conjointe", "copain", "copine",
                "compagnon", "compagne", "fiancé", "fiancée")
_EN_PARTNERS = ("husband", "wife", "boyfriend", "girlfriend", "fiance", "fiancee", "spouse", "partner")


@dataclass(frozen=True)
class GenderedTerms:
    language: str
    male: frozenset = field(default_factory=frozenset)
    female: frozenset = field(default_factory=frozenset)
    ignored: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        male = frozenset(w.casefold() for w in self.male)
        female = frozenset(w.casefold() for w in self.female)
        ignored = frozenset(w.casefold() for w in self.ignored)
        overlap = male & female
        if overlap:
            raise ConfigError(f"terms marked both male and female: {sorted(overlap)}")
        if not male or not female:
            raise ConfigError("gendered-term lexicon needs both male and female terms")
        if ignored & (male | female):
            raise ConfigError(f"ignored terms also marked gendered: {sorted(ignored & (male | female))}")
        object.__setattr__(self, "male", male)
        object.__setattr__(self, "female", female)
        object.__setattr__(self, "ignored", ignored)

    def terms_for(self, sex) -> frozenset:
        return self.male if Sex.parse(sex) is Sex.MALE else self.female

    @property
    def all_terms(self) -> frozenset:
        """Every word left out of the clinical-overlap comparison."""
        return self.male | self.female | self.ignored

    @classmethod
    def from_pairs(cls, language: str, pairs: Iterable[tuple[str | None, str | None]],
                   ignored: Iterable[str] = ()) -> "GenderedTerms":
        male = {m for m, _ in pairs if m}
        female = {f for _, f in pairs if f}
        return cls(language, frozenset(male), frozenset(female), frozenset(ignored))

    @classmethod
    def from_dict(cls, d: Mapping) -> "GenderedTerms":
        return cls(d["language"], frozenset(d["male"]), frozenset(d["female"]), frozenset(d.get("ignored", ())))

    def to_dict(self) -> dict:
        return {"language": self.language, "male": sorted(self.male), "female": sorted(self.female),
                "ignored": sorted(self.ignored)}


def default_gendered_terms(language: str) -> GenderedTerms:
    if language == "fr":
        return GenderedTerms.from_pairs("fr", _FR_PAIRS, _FR_PARTNERS)
    if language == "en":
        return GenderedTerms.from_pairs("en", _EN_PAIRS, _EN_PARTNERS)
    raise ConfigError(f"no gendered-term lexicon for language {language!r}")
