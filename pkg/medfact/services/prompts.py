"""Prompt templates sent through the chat gateway."""

from __future__ import annotations

from langchain_core.messages import SystemMessage
from langchain_core.prompts import ChatPromptTemplate

SUPPORTED_CLAIM_SYSTEM_PROMPT = (
    "You are a biomedical annotation expert, and your task is to generate a claim that can "
    "be supported by the provided article. The claim should be interpretable on its own, "
    "without relying on the article. Do not generate anything else than the claim."
)

REFUTED_CLAIM_SYSTEM_PROMPT = (
    "You are a biomedical annotation expert, and your task is to generate a claim that can "
    "be refuted by the provided article. The claim should be interpretable by its own, "
    "without relying on the article. Avoid using simple negative words such as not and no. "
    "Do not generate anything else than the claim."
)

VERIFICATION_SYSTEM_PROMPT = """You are a fact-checking expert trained in evidence-based medicine. Your task is to evaluate how strongly an *article* agrees or disagrees with a *claim*. The *article* is retrieved from a search engine using the *claim* as the query.
Use the following five-point scale:
   - **-2 Strong Contradiction**  – The article clearly and directly refutes the claim.
   - **-1 Partial Contradiction** – The article provides mixed or indirect evidence against the claim.
   - ** 0 Neutral / Unrelated**   – The article does not address the claim, offers insufficient information, or is irrelevant to the claim.
   - ** 1 Partial Agreement**     – The article offers some indirect or tentative support for the claim.
   - ** 2 Strong Agreement**      – The article explicitly and strongly supports the claim.
Note that the *article* might not describe the exact same subjects, interventions, or measurements as the *claim*. In this case, please note the difference and assign a score of 0.
Output in two parts only and do not output anything else:
<think>[your detailed, step‐by‐step explanation for scoring]</think>
<score>[the integer score only, i.e., -2, -1, 0, 1, or 2]</score>"""

QUESTION_CONVERSION_SYSTEM_PROMPT = (
    "You are a helpful assistant. Your task is to convert a yes/no question into a "
    'declarative statement. The statement should be a claim that is true if the answer to '
    'the question is "yes". Do not output anything else than the converted statement.'
)

CLAIM_EXTRACTION_SYSTEM_PROMPT = """You are an expert in biomedical literature and citation analysis. Your task is to extract every factual claim and its corresponding full citation from the provided text.

Instructions:
1. Identify every sentence or clause that makes a factual claim supported by a citation.
2. For each claim, identify the inline citation marker (e.g., "[1]", "(Smith, 2023)", "¹", "(PMID: 12345)").
3. Resolve this inline citation to its full reference entry from the bibliography/reference list at the end of the text.
  - If the text uses numeric citations (e.g., AMA, Vancouver, NLM), match the number to the numbered reference list.
  - If the text uses author-date/page citations (e.g., APA, MLA), match the author/date or author/page to the alphabetical reference list.
  - If the text uses only inline identifiers (e.g., PMID, DOI) and has no reference list, use the full inline citation string itself (e.g., "PMID: 12345").
4. Output the results as a strict JSON list of objects (only JSON; no additional text).
5. If a claim has multiple citations, repeat the same claim multiple times, once per citation, each time with a different citation.

JSON Format (example structure):
[
  {
    "claim": "The exact text of the factual claim.",
    "citation": "The full text of the corresponding reference entry (e.g., '1. Author AA. Title. Journal. Year...')."
  }
]"""

WORTHINESS_SYSTEM_PROMPT = (
    "You are a biomedical expert, and your task is to classify if a biomedical claim can be "
    "fact-checked.\n"
    'Please respond with "yes" if the claim meets the requirement, and "no" otherwise. '
    'Only output "yes" or "no".'
)

ARTICLE_TEMPLATE = "Title: {title}\nAbstract: {abstract}"

SUPPORTED_CLAIM_PROMPT = ChatPromptTemplate.from_messages(
    [
        ("system", SUPPORTED_CLAIM_SYSTEM_PROMPT),
        ("human", "Here is the article:\nTitle: {title}\nAbstract: {abstract}"),
    ]
)

REFUTED_CLAIM_PROMPT = ChatPromptTemplate.from_messages(
    [
        ("system", REFUTED_CLAIM_SYSTEM_PROMPT),
        ("human", "Here is the article:\nTitle: {title}\nAbstract: {abstract}"),
    ]
)

VERIFICATION_PROMPT = ChatPromptTemplate.from_messages(
    [
        ("system", VERIFICATION_SYSTEM_PROMPT),
        ("human", "Article:\n{article}\n\nClaim:\n{claim}"),
    ]
)

QUESTION_CONVERSION_PROMPT = ChatPromptTemplate.from_messages(
    [
        ("system", QUESTION_CONVERSION_SYSTEM_PROMPT),
        (
            "human",
            'Convert the following question into a claim, assuming the answer is "yes": \n'
            "Question: {question}",
        ),
    ]
)

# literal message: the JSON example contains braces
CLAIM_EXTRACTION_PROMPT = ChatPromptTemplate.from_messages(
    [
        SystemMessage(content=CLAIM_EXTRACTION_SYSTEM_PROMPT),
        ("human", "{model_answer}"),
    ]
)

WORTHINESS_PROMPT = ChatPromptTemplate.from_messages(
    [
        ("system", WORTHINESS_SYSTEM_PROMPT),
        ("human", 'Claim: "{claim}"'),
    ]
)

CITATION_INSTRUCTIONS = {
    "NLM": "Cite every factual statement with numbered in-text markers and list the references at the end in NLM (National Library of Medicine) style.",
    "AMA": "Cite every factual statement with numbered in-text markers and list the references at the end in AMA (American Medical Association) style.",
    "Vancouver": "Cite every factual statement with numbered in-text markers and list the references at the end in Vancouver style.",
    "APA": "Cite every factual statement with author-date in-text citations and list the references alphabetically at the end in APA style.",
    "MLA": "Cite every factual statement with author-page in-text citations and list the works cited alphabetically at the end in MLA style.",
    "PMID": "Cite every factual statement inline with the PubMed identifier of its source, written as (PMID: <number>). Do not add a reference list.",
    "DOI": "Cite every factual statement inline with the DOI of its source, written as (doi:<doi>). Do not add a reference list.",
}


def article_text(title: str, abstract: str) -> str:
    return ARTICLE_TEMPLATE.format(title=title, abstract=abstract)
