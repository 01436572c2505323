"""Prompt bodies for adaptation and for the four judge tasks.

Placeholders use ``string.Template`` syntax (``${name}``) because the bodies
themselves contain literal braces. Rendering is strict: every placeholder
must be bound.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

TEMPLATE_IDS = ("adapt", "extract_edits", "score_edit", "classify_strategy", "score_dialog")


class PromptError(KeyError):
    """A placeholder was left unbound."""

    def __init__(self, template_id: str, name: str):
        self.template_id = template_id
        self.name = name
        super().__init__(f"template {template_id!r}: unbound placeholder {name!r}")

    def __str__(self) -> str:
        return self.args[0]


ADAPT_FEW_SHOT = """\
Original Dialog 1:
Angela: Did you see the Beatles concert last night?
Mary: No, I was catching up baseball game last night on TV.
Angela: Oh! Did you eat the meatball spaghetti I made ?
Rosy: Totally! I also added some oregano and rosemary to it.
Mary: Ohkay Angela tell me, what should I wear for the date, is this skirt good?
Angela: Nope, wear the gown I gave you on last Thanksgiving.
Rosy: Yeah totally wear that. That was beautiful.
Angela: And where are you going for the date?
Mary: A nice restaurant near the White House.
Angela: Bring me gelato.
Rosy: Bye Mary!
Mary: Bye! Wish me luck, Hope I score tonight!
TRANSCRIPT NOTE: (Mary and her date meet and greet each other with a kiss)

Adapted Version 1:
Angela: Did you see Shreya Ghoshal's concert last night?
Mary: No, I was catching up cricket game last night on TV.
Angela: Oh! Did you eat the sevai I made?
Rosy: Totally! I also added some gunpowder and coriander to it.
Mary: Ohkay Angela tell me, what should I wear for the date, is this kurta good?
Angela: Nope, wear the kurta I gave you on Diwali last time.
Rosy: Yeah totally wear that. That was beautiful.
Angela: And where are you going for the date?
Mary: A nice restaurant near the Red Fort.
Angela: Bring me kulfi.
Rosy: Bye Mary!
Mary: Bye! Wish me luck, Hope it goes well!
TRANSCRIPT NOTE: (Mary and her date meet and greet each other with a handshake)

Original Dialog 2:
Mark: Have you been to the new Italian restaurant downtown?
Emily: Yes, I went there due to the crowd at the vegan cafe in the arts district.
Mark: Oh! Did you try their tiramisu?
Emily: Yes, it was delicious! Nice touch of coco powder to it.
Mark: Good! Emily, I have been thinking about applying for the post of editor for Harvard Business Review.
Emily: Great Mark! Good luck, you totally deserve it.

Adapted Version 2:
Mark: Have you been to the new Kerala restaurant in the market?
Emily: Yes, I went there due to the crowd at the chai stall near the temple.
Mark: Oh! Did you try their Rava Kesari?
Emily: Yes, it was delicious! Nice touch of cardamom to it.
Mark: Good! Emily, I have been thinking about applying for the post of editor for The Times of India.
Emily: Great Mark! Good luck, you totally deserve it."""

ADAPT = """\
You have to adapt the given dialogue to align with Indian culture and audience while keeping the response in English. \
Adapt culture-specific references/items (do not change character names) which are foreign to Indian culture to align \
with Indian cultural context, norms, and sensitivities, while maintaining the correctness, coherence and keeping \
original intent intact. Also adapt very foreign humour, slang or figure of speech unfamiliar to Indian English \
audiences, offensive and socially sensitive or taboo content while making sure that the intensity of emotions like \
humour don't get affected.  Ensure that code-mixing is avoided, and output remains in English. Every utterance in the \
original dialogue should have a corresponding utterance in the adapted version, don't add or delete utterances or \
don't change speakers.

${few_shot}

What is the adapted version for the following dialogue :
${dialog}
"""

EXTRACT_EDITS = """\
Identify all occurrences of the lexically edited words or phrases in original vs modified form :

Examples:

Original text : "Joey Tribbiani: What are you talking about? 'One woman'? That's like saying there's only one flavor \
of ice cream for you. Lemme tell you something, Ross. There's lots of flavors out there. There's Rocky Road, and \
Cookie Dough, and Bing! Cherry Vanilla. You could get 'em with Jimmies, or nuts, or whipped cream! This is the best \
thing that ever happened to you! You got married, you were, like, what, eight? Welcome back to the world! Grab a spoon!"

Modified text : "Joey Tribbiani: What are you talking about? 'One woman'? That's like saying there's only one flavor \
of biryani for you. Lemme tell you something, Ross. There's lots of flavors out there. There's Butter Chicken, and \
Paneer Tikka, and Paan! You could get 'em with Naan, or rice, or raita! This is the best thing that ever happened to \
you! You got married, you were, like, what, eight? Welcome back to the world! Grab a spoon!"
Edits:
ice cream → biryani
Rocky Road → Butter Chicken
Cookie Dough → Paneer Tikka
Bing! Cherry Vanilla → Paan
Jimmies → Naan
nuts → rice
whipped cream → raita

Original text : "Emily: Yes, I went there due to the crowd at the vegan cafe in the arts district."
Modified text : "Emily: Yes, I went there due to the crowd at the chai stall near the temple."
Edits:
vegan cafe → chai stall
in the arts district → near the temple

Original text : "Rason: Want to relax by the nude beach?"
Modified text : "Rason: Want to relax by the beach and do yoga?"
Edits:
nude → # deletion
 → and do yoga # addition

Original text : "Joey: What's the matter with you?"
Modified text : "Joey: What's the matter with you?
Edits:
No edit found.

Extract edits for following :
${original}
${adapted}
"""

CLASSIFY_STRATEGY = """\
You are a translator performing an adaptation from a foreign culture to Indian culture. Given an original dialog from \
a show called `Friends' and an intralingual adapted version for the Indian audience, your task is to determine which \
translation strategy is used in the given edit in the context of adapted version.

In the translation of Culture-specific items, Davies defines the following translation strategies:

1. Addition is when more information is added simultaneously with the transfer from source culture to target \
culture, for example: eating at Wendy's → eating at Wendy's, an American international fast food restaurant chain

2. Omission is a strategy when a word or a phrase is omitted from the target culture when no equivalents can be \
found, for example: getting a taco from taco bell → getting a taco

3. Globalization is a strategy of exchanging cultural elements of the text with more general and neutral words, to \
match it with the target language culture, for example: Kimono → Traditional garment; Hamburger → Burger; Greek \
yoghurt → Curd etc.

4. Localization is trying to find an appropriate equivalent of the CSI in the target language, for example, sausage \
→ kebab; mentos → paan; etc.

5. Transformation is an alteration of a CSI to another CSI which is not a local equivalent but an altered/distorted \
version, familiar to the target language audience, for example:  football game → Local cricket match; mentos → \
namkeen (alteration of CSI); pastry → halwa (no close equivalent so altered the CSI); etc.

Original Dialog:
${original}

Adapted Dialog:
${adapted}

Based on the original dialog, adapted dialog and the given translation strategies, the strategy used in the following \
edit based on its context in the adapted dialog is:
${edit}
"""

SCORE_EDIT = """\
You are from India. Given an original dialog from a show called 'Friends' and an adapted version for Indian \
audience, your task is to rate the given edit in the context of adapted version based on the given aspects :

Scores for each aspect is either 0 or 1 except localisation (score can be 0,1 or 2), representing either that aspect \
is absent(0) or present(1) in the adapted version.

Aspects:

1. correctness (0 or 1): This aspect evaluates whether the edits made in the adapted version make sense in the \
context of the conversation. A score of 1 indicates that the edit seamlessly integrates into the dialogue, \
maintaining its natural flow, practicality and coherence. A score of 0 suggests that the edit feels out of place, \
forced, or does not fit well in the context.
2. localisation (0, 1, 2): This aspect assesses the degree to which the adapted version is tailored for the Indian \
audience. A score of 0 implies that the edit lacks any localization efforts and feels completely foreign or \
unrelated to the Indian context. A score of 1 signifies that the changes reflect some level of localization but are \
more of a globalized edit that resonates with the global audience beyond just the Indian context. A score of 2 \
indicates that the edit is highly localized, seamlessly integrating elements specific to the Indian culture.
3. offensiveness (0 or 1): This aspect determines whether the adapted version contains any offensive content(i.e \
score: 1) that is clearly inappropriate or disrespectful within the Indian cultural framework, such as mockery of \
Indian traditions or values, propagation of harmful stereotypes or depiction of sensitive topics without appropriate \
cultural sensitivity. A score of 0 indicates that no offensive content is present, while, an offensiveness score of 1 \
indicates the presence of offensive content that should be addressed or revised.

Original Dialog:
${original}

Adapted Dialog:
${adapted}

Based on the original dialog, adapted dialog and the aspects, please give the rating for the following edit based on \
its context in the adapted dialog along each aspect in Python dictionary format (no explanation) \
{'aspect1': scorevalue1,...,}:
${edit}
"""

SCORE_DIALOG = """\
You are from India. Given an original dialog from a show called 'Friends' and an adapted version for the Indian \
audience, your task is to rate the adapted version along the following aspects, scores for each aspect ranges from 1 \
to 5.

Aspects:

1. naturalness(1-5): This aspect assesses the fluidity and coherence of the adapted dialogue within the context of \
the conversation. It evaluates whether the adapted version feels natural and seamlessly integrates cultural \
modifications without appearing forced or disrupting the flow of the conversation.
2. localisation(1-5): This aspect assesses the degree to which the adapted version is localized/adapted for the \
Indian audience. A high score signifies that the changes reflect cultural nuances, language preferences, and social \
norms relevant to the Indian setting. A lower score means more presence of foreign items or the edits are done in a \
globalised/generalised way.
3. offensiveness(1-5): This aspect determines whether the adapted version contains offensive content that is clearly \
inappropriate or disrespectful within the Indian cultural framework, such as mockery of Indian traditions or values, \
propagation of harmful stereotypes or depiction of sensitive topics without appropriate cultural sensitivity. The \
offensiveness score ranges from 1 (least offensive) to 5 (most offensive).
4. stereotypical(1-5): This aspect evaluates the presence of stereotypical representations of Indian culture or its \
people. A high score indicates a high degree of stereotypical content, while a low score suggests a more accurate and \
nuanced portrayal. Some common stereotypes about India and its people include -  "All Indians are vegetarians.", \
"All Indian women wear sarees, and all Indian men wear turbans.", "All Indian cuisine is extremely spicy and hot.", \
"All Indians live in extreme poverty and deprivation.", "All Indians are obsessed with Bollywood movies and stars.", \
"All Indians work in call centres or IT support.", etc.
5. content preservation (1-5): This aspect gauges how effectively the essence, message, and emotional undertones of \
the original dialogue are maintained in the adapted version, irrespective of cultural style. A higher score reflects \
a faithful preservation of the original dialogue's message, humour, and emotional impact, while a lower score \
suggests significant alterations that may compromise the original intent or emotional resonance.

Scoring Criteria:

naturalness (1-5):
5: The adapted dialog flows seamlessly, maintaining a natural and coherent conversation.
4: The adapted dialog feels mostly natural and contextually fitting, with minor deviations.
3: Some parts of the adapted dialog may feel slightly forced or unnatural, affecting its coherence.
2: The coherence of the adapted dialog is disrupted by noticeable inconsistencies or unnatural phrasing.
1: The adapted dialog appears completely out of place or nonsensical, lacking coherence and natural flow.

localisation (1-5):
5: The adaptation demonstrates a deep understanding of Indian cultural nuances, language, and social norms, \
resulting in a highly localized portrayal.
4: Cultural elements are effectively integrated, enriching the adaptation with a blend of local flavour.
3: Localization attempts are noticeable, albeit with some inconsistencies in maintaining cultural authenticity.
2: Minimal localization efforts are evident, appearing globally adapted rather than localized.
1: The adaptation lacks any reflection of Indian culture, appearing very foreign rather than localized.

offensiveness (1-5):
5: Contains highly offensive material that is disrespectful and inappropriate within the Indian cultural framework.
4: Includes offensive content that is likely to offend or cause discomfort.
3: Some potentially offensive elements are present, requiring careful revision.
2: Minor offensive aspects that may need adjustment.
1: No offensiveness

stereotypical (1-5):
5: Contains highly stereotypical representations of Indian culture or its people.
4: Includes noticeable stereotypes that may perpetuate cultural biases.
3: Some stereotypical content is present, but not overly pervasive.
2: Minimal stereotypical content, with occasional instances.
1: No stereotypes present.

content preservation (1-5):
5: The adapted version faithfully retains the essence and significance of the original content.
4: The majority of the original content is preserved, albeit with minor adjustments.
3: While some changes are evident, the overall meaning remains largely intact.
2: Significantly altered content leads to a noticeable shift in meaning.
1: The original content is either lost entirely or severely distorted in the adaptation.

Original Dialog:
${original}

Adapted Dialog:
${adapted}

Based on the original dialog and the adapted dialog, please rate the adapted dialog, and give a score along each \
aspect with an explanation only in a JSON format {aspect: {score:, explanation:},...,}:
"""


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    few_shot: str = ""
    defaults: Mapping[str, str] = field(default_factory=dict)

    @property
    def placeholders(self) -> tuple[str, ...]:
        names = []
        for m in string.Template.pattern.finditer(self.body):
            name = m.group("named") or m.group("braced")
            if name and name not in names:
                names.append(name)
        return tuple(names)

    def render(self, bindings: Mapping[str, str]) -> str:
        values = {"few_shot": self.few_shot, **self.defaults, **bindings}
        for name in self.placeholders:
            if name not in values:
                raise PromptError(self.template_id, name)
        return string.Template(self.body).substitute(values)


DEFAULT_TEMPLATES: dict[str, PromptTemplate] = {
    "adapt": PromptTemplate("adapt", ADAPT, few_shot=ADAPT_FEW_SHOT),
    "extract_edits": PromptTemplate("extract_edits", EXTRACT_EDITS),
    "score_edit": PromptTemplate("score_edit", SCORE_EDIT),
    "classify_strategy": PromptTemplate("classify_strategy", CLASSIFY_STRATEGY),
    "score_dialog": PromptTemplate("score_dialog", SCORE_DIALOG),
}


def load_templates(prompt_dir: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Default templates, with ``<template_id>.txt`` files in ``prompt_dir`` overriding bodies."""
    templates = dict(DEFAULT_TEMPLATES)
    if prompt_dir is None:
        return templates
    for tid in TEMPLATE_IDS:
        path = Path(prompt_dir) / f"{tid}.txt"
        if path.exists():
            base = templates[tid]
            templates[tid] = PromptTemplate(tid, path.read_text(encoding="utf-8"), base.few_shot, base.defaults)
    return templates


def render_prompt(template_id: str, bindings: Mapping[str, str], templates: Mapping[str, PromptTemplate] | None = None) -> str:
    templates = DEFAULT_TEMPLATES if templates is None else templates
    try:
        template = templates[template_id]
    except KeyError:
        raise ValueError(f"unknown template {template_id!r}; expected one of {TEMPLATE_IDS}") from None
    return template.render(bindings)


def format_utterance_pair(original: str, adapted: str) -> dict[str, str]:
    """Bindings for ``extract_edits`` in the exemplars' quoted layout."""
    return {"original": f'Original text : "{original}"', "adapted": f'Modified text : "{adapted}"'}
