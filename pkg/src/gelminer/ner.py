"""Gene/protein name tagging in gel labels via case-sensitive lexicon lookup.

Tokens are excluded before lookup when they are shorter than three characters,
are numbers (Arabic digit strings or Roman numerals), or appear in either
stoplist: a file-supplied list of frequent words and a fixed list of 22 words
common around gel diagrams, some of which collide with gene symbols. Stoplist
matching is case-insensitive; lexicon lookup is exact-case, since many gel
labels are acronyms whose capitalization is what identifies them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from gelminer.panels import GelPanel
from gelminer.segmentation import Segment, SegmentKind


class DivisionUndefined(Exception):
    """A token-ratio denominator is empty."""


# Fixed domain stoplist: frequent words around gel diagrams.
DOMAIN_STOPWORDS: tuple[str, ...] = (
    "min", "hrs", "line", "type", "protein", "DNA", "RNA", "mRNA",
    "membrane", "gel", "fold", "fragment", "antigen", "enzyme", "kinase",
    "cleavage", "factor", "blot", "pro", "pre", "peptide", "cell",
)

_STRIP_CHARS = ".,:;()[]{}\"'"
_ROMAN_RE = re.compile(r"^M{0,3}(CM|CD|D?C{0,3})(XC|XL|L?X{0,3})(IX|IV|V?I{0,3})$")


@dataclass(frozen=True)
class GeneLexicon:
    entries: dict[str, tuple[str, ...]]

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def lookup(self, token: str) -> tuple[str, ...]:
        return self.entries.get(token, ())

    @classmethod
    def load(cls, path: str | Path) -> "GeneLexicon":
        """Lexicon file: UTF-8, one `token TAB gene_id[,gene_id...]` per line."""
        entries: dict[str, tuple[str, ...]] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            token, _, ids = line.partition("\t")
            if not token:
                raise ValueError(f"empty lexicon token in line: {line!r}")
            entries[token] = tuple(i for i in ids.strip().split(",") if i)
        return cls(entries=entries)


@dataclass(frozen=True)
class ExclusionRules:
    common_words: frozenset[str]  # lowercased
    domain_words: frozenset[str] = frozenset(w.lower() for w in DOMAIN_STOPWORDS)
    min_token_length: int = 3


def load_stoplist(path: str | Path) -> frozenset[str]:
    """One word per line; blank lines and # comments ignored."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        word = line.strip()
        if word and not word.startswith("#"):
            words.add(word.lower())
    return frozenset(words)


def _packaged(name: str):
    return resources.files("gelminer.data").joinpath(name)


def default_rules() -> ExclusionRules:
    with resources.as_file(_packaged("common_words.txt")) as p:
        return ExclusionRules(common_words=load_stoplist(p))


def default_lexicon() -> GeneLexicon:
    with resources.as_file(_packaged("gene_lexicon.tsv")) as p:
        return GeneLexicon.load(p)


@dataclass(frozen=True)
class GeneMention:
    token: str
    gene_ids: tuple[str, ...]
    segment_id: int
    panel_id: int


def tokenize(text: str) -> list[str]:
    """Whitespace split, then strip surrounding punctuation; internal hyphens,
    slashes, and Greek letters survive."""
    tokens = []
    for raw in text.split():
        token = raw.strip(_STRIP_CHARS)
        if token:
            tokens.append(token)
    return tokens


def _is_roman_numeral(token: str) -> bool:
    upper = token.upper()
    if not upper or any(c not in "IVXLCDM" for c in upper):
        return False
    return _ROMAN_RE.match(upper) is not None


def is_excluded(token: str, rules: ExclusionRules) -> bool:
    if len(token) < rules.min_token_length:
        return True
    if all(c in "0123456789" for c in token):
        return True
    if _is_roman_numeral(token):
        return True
    lowered = token.lower()
    return lowered in rules.common_words or lowered in rules.domain_words


def tag_mentions(
    panel: GelPanel,
    lexicon: GeneLexicon,
    rules: ExclusionRules,
    panel_id: int = 0,
) -> list[GeneMention]:
    """Mentions in label order; duplicates across labels are kept because
    frequency matters when comparing token ratios."""
    mentions = []
    for segment_id, text in panel.labels:
        for token in tokenize(text):
            if is_excluded(token, rules):
                continue
            gene_ids = lexicon.lookup(token)
            if gene_ids:
                mentions.append(
                    GeneMention(
                        token=token,
                        gene_ids=gene_ids,
                        segment_id=segment_id,
                        panel_id=panel_id,
                    )
                )
    return mentions


@dataclass(frozen=True)
class TokenStats:
    label_tokens: int
    label_gene_tokens: int
    text_tokens: int
    text_gene_tokens: int

    @property
    def in_label_ratio(self) -> float:
        return self.label_gene_tokens / self.label_tokens

    @property
    def overall_ratio(self) -> float:
        return self.text_gene_tokens / self.text_tokens


def _count(texts: list[str], lexicon: GeneLexicon, rules: ExclusionRules) -> tuple[int, int]:
    total = 0
    genes = 0
    for text in texts:
        for token in tokenize(text):
            total += 1
            if not is_excluded(token, rules) and token in lexicon:
                genes += 1
    return total, genes


def token_stats(
    panels: list[GelPanel],
    all_text: list[Segment],
    lexicon: GeneLexicon,
    rules: ExclusionRules,
) -> TokenStats:
    """Gene-token fraction over gel-label segments versus over all text
    segments. Each label segment counts once even when several panels share
    it. Raises DivisionUndefined when either token population is empty."""
    label_texts: dict[int, str] = {}
    for panel in panels:
        for segment_id, text in panel.labels:
            label_texts.setdefault(segment_id, text)
    label_total, label_genes = _count(list(label_texts.values()), lexicon, rules)
    text_total, text_genes = _count(
        [s.ocr_text or "" for s in all_text if s.kind == SegmentKind.TEXT], lexicon, rules
    )
    if label_total == 0 or text_total == 0:
        raise DivisionUndefined("empty token population")
    return TokenStats(
        label_tokens=label_total,
        label_gene_tokens=label_genes,
        text_tokens=text_total,
        text_gene_tokens=text_genes,
    )
