"""Prompt templates for triage scoring and counterfactual rewriting."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

from .core import ConfigError, DecisionRecord, Sex

# Triage prompts. ``{patient_clinical_history}`` receives the serialised record.
TRIAGE_PROMPTS = {
    "fr": (
        "<s>[INST] Vous êtes un système qui aide à effectuer le triage des patients dans le service "
        "des urgences d'un hôpital. Compte tenu de l'anamnèse (qui contient diverses informations "
        "relatives au patient(e) et son contexte), affectez un score de triage de 2 à 5 (soit 2, "
        "soit 3, soit 4, soit 5) pour le patient, ou 2 est plus grave et 5 moins grave. Juste le "
        "numéro, pas d'explications avec.\n"
        "#### Début de l'anamnèse ####\n"
        "{patient_clinical_history}\n"
        "#### Fin de l'anamnèse ####\n"
        "Score de triage: [/INST]"
    ),
    "en": (
        "<s>[INST] You are an assistant that helps perform emergency triage at an emergency "
        "department of a hospital. Taking into account each patient's clinical history (and other "
        "information related to the patient's condition and their context), assign a triage score "
        "from 1 to 4 (either 1, 2, 3 or 4) where 1 is the most critical and 4 is the least "
        "critical. Only the number, no explanations with\n"
        "#### Start of the patient's file ####\n"
        "{patient_clinical_history}\n"
        "#### End of the patient's file ####\n"
        "Triage score: [/INST]"
    ),
}

# Variable names used when a record is flattened into one string.
_FIELD_NAMES = {
    "fr": {"sex": "Sexe", "age": "Age", "chief_complaint": "Motif", "hpi": "Anamnèse", "pmh": "Antécédents"},
    "en": {"sex": "Sex", "age": "Age", "chief_complaint": "Chief complaint", "hpi": "Clinical note", "pmh": "Past medical history"},
}


def serialize_record(record: DecisionRecord, language: str = "fr") -> str:
    """Flatten a record into ``name: value`` pairs, skipping absent fields.

    Text-isolated variants have no sex and are rendered without it; empty
    text fields are kept with an empty value so the layout stays stable.
    """
    names = _FIELD_NAMES[language]
    parts = []
    if record.sex is not None:
        parts.append(f"{names['sex']}: {record.sex.code}")
    if record.age is not None:
        parts.append(f"{names['age']}: {_fmt(record.age)}")
    for key in sorted(record.tabular):
        value = record.tabular[key]
        if value is not None:
            parts.append(f"{key}: {_fmt(value)}")
    for key in ("chief_complaint", "hpi", "pmh"):
        parts.append(f"{names[key]}: {getattr(record, key)}")
    return ", ".join(parts)


def _fmt(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def triage_prompt(record: DecisionRecord, language: str = "fr", template: str | None = None) -> str:
    template = template or TRIAGE_PROMPTS[language]
    return template.format(patient_clinical_history=serialize_record(record, language))


@dataclass(frozen=True)
class PromptTemplate:
    """Few-shot rewriting prompt.

    ``fields`` maps each labelled slot of the input line to a record
    attribute, in order, after the leading sex slot. Exemplars are
    ``(input_line, output_line)`` pairs in the same format.
    """

    language: str
    system_prompt: str
    instruction: str
    exemplars: tuple[tuple[str, str], ...]
    header: str
    input_label: str
    sex_label: str
    fields: tuple[tuple[str, str], ...]
    exemplar_input_label: str = ""
    exemplar_output_label: str = ""
    n_exemplars: int | None = None

    def __post_init__(self):
        n = len(self.exemplars) if self.n_exemplars is None else self.n_exemplars
        if n > len(self.exemplars) or n < 0:
            raise ConfigError(f"template has {len(self.exemplars)} exemplars, {n} requested")
        object.__setattr__(self, "n_exemplars", n)

    def with_exemplars(self, n: int) -> "PromptTemplate":
        return replace(self, n_exemplars=n)

    def format_input(self, sex: Sex | None, values: Mapping[str, str]) -> str:
        sex_code = "" if sex is None else Sex.parse(sex).code
        parts = [f"{self.sex_label} : {sex_code}"] if self.language == "fr" else [f"{self.sex_label}: {sex_code}"]
        for label, attr in self.fields:
            sep = " : " if self.language == "fr" else ": "
            parts.append(f"{label}{sep}{values.get(attr, '')}")
        return ", ".join(parts)

    def format_record(self, record: DecisionRecord) -> str:
        return self.format_input(record.sex, {attr: getattr(record, attr) for _, attr in self.fields})


FR_EXEMPLARS = (
    (
        "Sexe patient : M, Anamnèse : Patient de 54 ans amené par les pompiers pour douleur thoracique depuis 2h, il est conscient et orienté, Antécédents : HTA, tabagisme actif",
        "Sexe patient : F, Anamnèse : Patiente de 54 ans amenée par les pompiers pour douleur thoracique depuis 2h, elle est consciente et orientée, Antécédents : HTA, tabagisme actif",
    ),
    (
        "Sexe patient : F, Anamnèse : Chute de sa hauteur, retrouvée au sol par sa fille, douleur hanche droite, Antécédents : ostéoporose, AVC 2019",
        "Sexe patient : M, Anamnèse : Chute de sa hauteur, retrouvé au sol par sa fille, douleur hanche droite, Antécédents : ostéoporose, AVC 2019",
    ),
    (
        "Sexe patient : M, Anamnèse : Céphalées brutales ce matin, vomissements, Antécédents : aucun",
        "Sexe patient : F, Anamnèse : Céphalées brutales ce matin, vomissements, Antécédents : aucun",
    ),
    (
        "Sexe patient : F, Anamnèse : Madame X adressée par son médecin traitant pour dyspnée, elle est essoufflée au moindre effort, Antécédents : BPCO, diabète type 2",
        "Sexe patient : M, Anamnèse : Monsieur X adressé par son médecin traitant pour dyspnée, il est essoufflé au moindre effort, Antécédents : BPCO, diabète type 2",
    ),
    (
        "Sexe patient : M, Anamnèse : Plaie main gauche avec un couteau, son épouse a fait un pansement, Antécédents : RAS",
        "Sexe patient : F, Anamnèse : Plaie main gauche avec un couteau, son mari a fait un pansement, Antécédents : RAS",
    ),
    (
        "Sexe patient : F, Anamnèse : Patiente âgée de 82 ans, confuse depuis hier selon son fils, fièvre 38.9, Antécédents : démence, FA sous AOD",
        "Sexe patient : M, Anamnèse : Patient âgé de 82 ans, confus depuis hier selon son fils, fièvre 38.9, Antécédents : démence, FA sous AOD",
    ),
    (
        "Sexe patient : M, Anamnèse : Homme alcoolisé retrouvé allongé sur la voie publique, agité, Antécédents : OH chronique",
        "Sexe patient : F, Anamnèse : Femme alcoolisée retrouvée allongée sur la voie publique, agitée, Antécédents : OH chronique",
    ),
    (
        "Sexe patient : F, Anamnèse : Douleur abdominale FID depuis 24h, pas de fièvre, elle est inquiète, Antécédents : appendicectomie non",
        "Sexe patient : M, Anamnèse : Douleur abdominale FID depuis 24h, pas de fièvre, il est inquiet, Antécédents : appendicectomie non",
    ),
    (
        "Sexe patient : M, Anamnèse : Entorse cheville droite au football, le patient ne peut pas poser le pied, Antécédents : aucun",
        "Sexe patient : F, Anamnèse : Entorse cheville droite au football, la patiente ne peut pas poser le pied, Antécédents : aucun",
    ),
    (
        "Sexe patient : F, Anamnèse : Palpitations depuis 1h, elle est venue seule, Antécédents : hyperthyroïdie traitée",
        "Sexe patient : M, Anamnèse : Palpitations depuis 1h, il est venu seul, Antécédents : hyperthyroïdie traitée",
    ),
)

EN_EXEMPLARS = (
    (
        "Patient sex: M, Chief complaint: chest pain, Clinical note: 54 year old man with chest pain for 2 hours, he denies dyspnea",
        "Patient sex: F, Chief complaint: chest pain, Clinical note: 54 year old woman with chest pain for 2 hours, she denies dyspnea",
    ),
    (
        "Patient sex: F, Chief complaint: fall, Clinical note: Found on the floor by her daughter, complains of right hip pain",
        "Patient sex: M, Chief complaint: fall, Clinical note: Found on the floor by his daughter, complains of right hip pain",
    ),
    (
        "Patient sex: M, Chief complaint: headache, Clinical note: Sudden severe headache this morning with vomiting",
        "Patient sex: F, Chief complaint: headache, Clinical note: Sudden severe headache this morning with vomiting",
    ),
    (
        "Patient sex: F, Chief complaint: dyspnea, Clinical note: Mrs. X sent by her PCP for shortness of breath, she is winded on minimal exertion",
        "Patient sex: M, Chief complaint: dyspnea, Clinical note: Mr. X sent by his PCP for shortness of breath, he is winded on minimal exertion",
    ),
    (
        "Patient sex: M, Chief complaint: hand laceration, Clinical note: Cut his left hand with a knife, his wife applied a dressing",
        "Patient sex: F, Chief complaint: hand laceration, Clinical note: Cut her left hand with a knife, her husband applied a dressing",
    ),
    (
        "Patient sex: F, Chief complaint: confusion, Clinical note: 82 yo lady confused since yesterday per her son, fever 102.1",
        "Patient sex: M, Chief complaint: confusion, Clinical note: 82 yo gentleman confused since yesterday per his son, fever 102.1",
    ),
    (
        "Patient sex: M, Chief complaint: ETOH, Clinical note: Intoxicated male found lying on the street, agitated, he refuses care",
        "Patient sex: F, Chief complaint: ETOH, Clinical note: Intoxicated female found lying on the street, agitated, she refuses care",
    ),
    (
        "Patient sex: F, Chief complaint: abd pain, Clinical note: RLQ pain for 24 hours, no fever, she is anxious",
        "Patient sex: M, Chief complaint: abd pain, Clinical note: RLQ pain for 24 hours, no fever, he is anxious",
    ),
    (
        "Patient sex: M, Chief complaint: ankle injury, Clinical note: Twisted right ankle playing soccer, the boy cannot bear weight",
        "Patient sex: F, Chief complaint: ankle injury, Clinical note: Twisted right ankle playing soccer, the girl cannot bear weight",
    ),
    (
        "Patient sex: F, Chief complaint: palpitations, Clinical note: Palpitations for 1 hour, she came in by herself",
        "Patient sex: M, Chief complaint: palpitations, Clinical note: Palpitations for 1 hour, he came in by himself",
    ),
)

FR_TEMPLATE = PromptTemplate(
    language="fr",
    system_prompt=(
        "Tu es un assistant qui va transformer des anamnèses médicales en remplaçant les références "
        "au sexe dans le texte par le sexe opposé."
    ),
    instruction=(
        "Tu vas recevoir l'anamnèse d'un(e) patient(e). Ta tâche est de remplacer les références au "
        "sexe par le sexe opposé. Par exemple, \"patient\" devient \"patiente\", \"homme\" devient "
        "\"femme\", etc. N'effectue aucune traduction et ne corrige aucune faute d'orthographe."
    ),
    exemplars=FR_EXEMPLARS,
    header="#### Anamnèse à changer ####",
    input_label="Anamnèse originale:",
    sex_label="Sexe patient",
    fields=(("Anamnèse", "hpi"), ("Antécédents", "pmh")),
    exemplar_input_label="Anamnèse originale:",
    exemplar_output_label="Anamnèse transformée:",
)

EN_TEMPLATE = PromptTemplate(
    language="en",
    system_prompt=(
        "You are an assistant who will transform medical notes by replacing sex references in the "
        "text with the opposite sex."
    ),
    instruction=(
        "You will receive a patient's clinical note. Your task is to replace sex references with the "
        "opposite sex. For example, \"he\" becomes \"she\", \"man\" becomes \"woman\", etc. Do not "
        "perform any other modifications to the clinical content and do not correct any spelling "
        "errors."
    ),
    exemplars=EN_EXEMPLARS,
    header="#### Note to transform ####",
    input_label="Original note:",
    sex_label="Patient sex",
    fields=(("Chief complaint", "chief_complaint"), ("Clinical note", "hpi")),
    exemplar_input_label="Original note:",
    exemplar_output_label="Transformed note:",
)

TEMPLATES = {"fr": FR_TEMPLATE, "en": EN_TEMPLATE}


def get_template(language: str, n_exemplars: int | None = None) -> PromptTemplate:
    try:
        template = TEMPLATES[language]
    except KeyError:
        raise ConfigError(f"no counterfactual template for language {language!r}") from None
    return template if n_exemplars is None else template.with_exemplars(n_exemplars)


def build_user_message(record: DecisionRecord, template: PromptTemplate) -> str:
    blocks = [template.instruction]
    for src, dst in template.exemplars[: template.n_exemplars]:
        blocks.append(f"{template.exemplar_input_label}\n{src}\n{template.exemplar_output_label}\n{dst}")
    blocks.append(f"{template.header}\n{template.input_label}\n{template.format_record(record)}")
    return "\n\n".join(blocks)


def build_messages(record: DecisionRecord, template: PromptTemplate) -> list[dict]:
    return [
        {"role": "system", "content": template.system_prompt},
        {"role": "user", "content": build_user_message(record, template)},
    ]


def build_prompt(record: DecisionRecord, template: PromptTemplate) -> str:
    """System prompt, instruction, exemplars and the record, as one string."""
    return template.system_prompt + "\n\n" + build_user_message(record, template)
