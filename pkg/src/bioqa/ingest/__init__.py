from .abstracts import Abstract, AbstractFetchError, AbstractStore, fetch_abstract, split_sentences
from .bioasq import BioASQParseError, BioASQQuestion, Snippet, load_bioasq, parse_bioasq
from .passages import (
    PairBuildError,
    QAPair,
    StrategyConfig,
    build_pairs,
    find_snippet,
    locate_answer_occurrences,
    undersample_yesno,
)
from .squad import SquadFormatError, from_squad_json, load_squad, to_squad_json

__all__ = [
    "Abstract", "AbstractFetchError", "AbstractStore", "fetch_abstract", "split_sentences",
    "BioASQParseError", "BioASQQuestion", "Snippet", "load_bioasq", "parse_bioasq",
    "PairBuildError", "QAPair", "StrategyConfig", "build_pairs", "find_snippet",
    "locate_answer_occurrences", "undersample_yesno",
    "SquadFormatError", "from_squad_json", "load_squad", "to_squad_json",
]
